//! COLMAP sparse text layout: cameras.txt / images.txt / points3D.txt,
//! plus the optional matches.txt with explicit pair weights.
//!
//! Only pinhole models are handled; poses are stored as world-to-camera
//! quaternion + translation and converted to rotation matrices on parse.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{Matrix3, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::num::Real;

use super::{CameraView, ImageRef, SparseModel, SparsePoint};

/// Serialized form of a sparse model, one string per file.
#[derive(Debug, Clone)]
pub struct SparseModelText {
    pub cameras: String,
    pub images: String,
    pub points3d: String,
    pub matches: String,
}

struct CameraIntrinsics<T> {
    width: u32,
    height: u32,
    fx: T,
    fy: T,
    cx: T,
    cy: T,
}

pub use crate::splat::project::quaternion_to_rotation;

/// Rotation matrix to a unit quaternion `(w, x, y, z)` with `w >= 0`.
pub fn rotation_to_quaternion<T: Real>(r: &Matrix3<T>) -> Vector4<T> {
    let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let quarter = T::of(0.25);
    let (w, x, y, z);
    if trace > T::zero() {
        let s = (trace + T::one()).sqrt() * T::of(2.0);
        w = quarter * s;
        x = (r[(2, 1)] - r[(1, 2)]) / s;
        y = (r[(0, 2)] - r[(2, 0)]) / s;
        z = (r[(1, 0)] - r[(0, 1)]) / s;
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (T::one() + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * T::of(2.0);
        w = (r[(2, 1)] - r[(1, 2)]) / s;
        x = quarter * s;
        y = (r[(0, 1)] + r[(1, 0)]) / s;
        z = (r[(0, 2)] + r[(2, 0)]) / s;
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (T::one() + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * T::of(2.0);
        w = (r[(0, 2)] - r[(2, 0)]) / s;
        x = (r[(0, 1)] + r[(1, 0)]) / s;
        y = quarter * s;
        z = (r[(1, 2)] + r[(2, 1)]) / s;
    } else {
        let s = (T::one() + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * T::of(2.0);
        w = (r[(1, 0)] - r[(0, 1)]) / s;
        x = (r[(0, 2)] + r[(2, 0)]) / s;
        y = (r[(1, 2)] + r[(2, 1)]) / s;
        z = quarter * s;
    }
    let q = Vector4::new(w, x, y, z);
    let q = q / q.norm();
    if q.x < T::zero() {
        -q
    } else {
        q
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn field<'a, I: Iterator<Item = &'a str>, F: std::str::FromStr>(
    tokens: &mut I,
    file: &str,
    line: usize,
    name: &str,
) -> Result<F> {
    let tok = tokens
        .next()
        .ok_or_else(|| Error::parse(line, format!("{file}: missing field {name}")))?;
    tok.parse()
        .map_err(|_| Error::parse(line, format!("{file}: bad {name} {tok:?}")))
}

fn parse_cameras<T: Real>(text: &str) -> Result<BTreeMap<u32, CameraIntrinsics<T>>> {
    let mut cams = BTreeMap::new();
    for (line, raw) in content_lines(text) {
        let mut t = raw.split_whitespace();
        let id: u32 = field(&mut t, "cameras.txt", line, "camera id")?;
        let model: String = field(&mut t, "cameras.txt", line, "model")?;
        let width: u32 = field(&mut t, "cameras.txt", line, "width")?;
        let height: u32 = field(&mut t, "cameras.txt", line, "height")?;
        let cam = match model.as_str() {
            "PINHOLE" => CameraIntrinsics {
                width,
                height,
                fx: T::of(field(&mut t, "cameras.txt", line, "fx")?),
                fy: T::of(field(&mut t, "cameras.txt", line, "fy")?),
                cx: T::of(field(&mut t, "cameras.txt", line, "cx")?),
                cy: T::of(field(&mut t, "cameras.txt", line, "cy")?),
            },
            "SIMPLE_PINHOLE" => {
                let f = T::of(field(&mut t, "cameras.txt", line, "f")?);
                CameraIntrinsics {
                    width,
                    height,
                    fx: f,
                    fy: f,
                    cx: T::of(field(&mut t, "cameras.txt", line, "cx")?),
                    cy: T::of(field(&mut t, "cameras.txt", line, "cy")?),
                }
            }
            other => {
                return Err(Error::parse(
                    line,
                    format!("cameras.txt: unsupported camera model {other:?} (pinhole only)"),
                ))
            }
        };
        if cams.insert(id, cam).is_some() {
            return Err(Error::parse(line, format!("cameras.txt: duplicate camera id {id}")));
        }
    }
    Ok(cams)
}

/// Parses the three COLMAP text files into a [`SparseModel`]. Match edges
/// are left empty; supply them via [`parse_matches`] or derive them from
/// covisibility.
pub fn parse_sparse_model<T: Real>(
    cameras_txt: &str,
    images_txt: &str,
    points_txt: &str,
) -> Result<SparseModel<T>> {
    let cams = parse_cameras::<T>(cameras_txt)?;

    // images.txt alternates a pose line and a POINTS2D line per image
    let mut views: Vec<CameraView<T>> = Vec::new();
    let mut image_observations: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
    let mut lines = content_lines(images_txt).peekable();
    while let Some((line, raw)) = lines.next() {
        let mut t = raw.split_whitespace();
        let id: u32 = field(&mut t, "images.txt", line, "image id")?;
        let qw: f64 = field(&mut t, "images.txt", line, "qw")?;
        let qx: f64 = field(&mut t, "images.txt", line, "qx")?;
        let qy: f64 = field(&mut t, "images.txt", line, "qy")?;
        let qz: f64 = field(&mut t, "images.txt", line, "qz")?;
        let tx: f64 = field(&mut t, "images.txt", line, "tx")?;
        let ty: f64 = field(&mut t, "images.txt", line, "ty")?;
        let tz: f64 = field(&mut t, "images.txt", line, "tz")?;
        let camera_id: u32 = field(&mut t, "images.txt", line, "camera id")?;
        let name = t.next().unwrap_or("").to_string();

        let q = Vector4::new(T::of(qw), T::of(qx), T::of(qy), T::of(qz));
        if q.norm().as_f64() < 1e-12 {
            return Err(Error::parse(line, format!("images.txt: zero quaternion for image {id}")));
        }
        let cam = cams.get(&camera_id).ok_or_else(|| {
            Error::Integrity(format!("image {id} references unknown camera {camera_id}"))
        })?;

        // the POINTS2D line is mandatory in the text layout, possibly empty;
        // an empty line was already filtered out, so peek for a pose-shaped
        // line instead of consuming it
        let mut observed = Vec::new();
        if let Some(&(pline, praw)) = lines.peek() {
            if !looks_like_pose_line(praw) {
                lines.next();
                let toks: Vec<&str> = praw.split_whitespace().collect();
                if toks.len() % 3 != 0 {
                    return Err(Error::parse(
                        pline,
                        format!("images.txt: POINTS2D line has {} tokens, expected triplets", toks.len()),
                    ));
                }
                for triple in toks.chunks_exact(3) {
                    let pid: i64 = triple[2].parse().map_err(|_| {
                        Error::parse(pline, format!("images.txt: bad point3D id {:?}", triple[2]))
                    })?;
                    if pid >= 0 {
                        observed.push(pid as u64);
                    }
                }
            }
        }
        image_observations.insert(id, observed);

        views.push(CameraView {
            id,
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            rotation: quaternion_to_rotation(&q),
            translation: Vector3::new(T::of(tx), T::of(ty), T::of(tz)),
            width: cam.width,
            height: cam.height,
            image_ref: if name.is_empty() { None } else { Some(ImageRef::Path(name.into())) },
        });
    }
    views.sort_by_key(|v| v.id);
    let view_ids: BTreeSet<u32> = views.iter().map(|v| v.id).collect();
    if view_ids.len() != views.len() {
        return Err(Error::Integrity("duplicate image ids in images.txt".into()));
    }

    // points3D.txt: id, position, color, error, then (image_id, point2d_idx) pairs
    let mut point_ids: Vec<u64> = Vec::new();
    let mut points: Vec<SparsePoint<T>> = Vec::new();
    let mut point_index: BTreeMap<u64, usize> = BTreeMap::new();
    for (line, raw) in content_lines(points_txt) {
        let mut t = raw.split_whitespace();
        let pid: u64 = field(&mut t, "points3D.txt", line, "point id")?;
        let x: f64 = field(&mut t, "points3D.txt", line, "x")?;
        let y: f64 = field(&mut t, "points3D.txt", line, "y")?;
        let z: f64 = field(&mut t, "points3D.txt", line, "z")?;
        let r: u32 = field(&mut t, "points3D.txt", line, "r")?;
        let g: u32 = field(&mut t, "points3D.txt", line, "g")?;
        let b: u32 = field(&mut t, "points3D.txt", line, "b")?;
        let _err: f64 = field(&mut t, "points3D.txt", line, "error")?;
        if r > 255 || g > 255 || b > 255 {
            return Err(Error::parse(line, "points3D.txt: color out of byte range"));
        }
        let rest: Vec<&str> = t.collect();
        if rest.len() % 2 != 0 {
            return Err(Error::parse(
                line,
                format!("points3D.txt: track has {} tokens, expected pairs", rest.len()),
            ));
        }
        let mut observers: Vec<u32> = Vec::new();
        for pair in rest.chunks_exact(2) {
            let img: u32 = pair[0].parse().map_err(|_| {
                Error::parse(line, format!("points3D.txt: bad track image id {:?}", pair[0]))
            })?;
            if !view_ids.contains(&img) {
                return Err(Error::Integrity(format!(
                    "point {pid} track references unknown image {img}"
                )));
            }
            observers.push(img);
        }
        if point_index.insert(pid, points.len()).is_some() {
            return Err(Error::parse(line, format!("points3D.txt: duplicate point id {pid}")));
        }
        point_ids.push(pid);
        points.push(SparsePoint {
            position: Vector3::new(T::of(x), T::of(y), T::of(z)),
            color: Vector3::new(
                T::of(r as f64 / 255.0),
                T::of(g as f64 / 255.0),
                T::of(b as f64 / 255.0),
            ),
            observers,
        });
    }

    // fold the per-image observations into the point tracks
    for (&img, observed) in &image_observations {
        for &pid in observed {
            let &idx = point_index.get(&pid).ok_or_else(|| {
                Error::Integrity(format!("image {img} observes unknown point3D id {pid}"))
            })?;
            points[idx].observers.push(img);
        }
    }
    for p in &mut points {
        p.observers.sort_unstable();
        p.observers.dedup();
    }

    let model = SparseModel { views, points, match_edges: Vec::new() };
    model.validate()?;
    Ok(model)
}

fn looks_like_pose_line(line: &str) -> bool {
    // pose lines have 10 fields ending in a non-numeric name; POINTS2D lines
    // are triplets of numbers
    let toks: Vec<&str> = line.split_whitespace().collect();
    toks.len() >= 10 && toks.len() % 3 != 0 || toks.last().is_some_and(|t| t.parse::<f64>().is_err())
}

/// Serializes a model back to COLMAP text. Rotations go through a
/// quaternion conversion, so reparsing reproduces them to ~1e-15 rather
/// than bit-exactly; everything else round-trips exactly.
pub fn serialize_sparse_model<T: Real>(model: &SparseModel<T>) -> SparseModelText {
    let mut cameras = String::from("# CAMERA_ID MODEL WIDTH HEIGHT FX FY CX CY\n");
    let mut images = String::from("# IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME / POINTS2D\n");
    let mut points3d = String::from("# POINT3D_ID X Y Z R G B ERROR TRACK\n");

    // per-view observation lists, in point order
    let mut per_view: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (idx, p) in model.points.iter().enumerate() {
        for &o in &p.observers {
            per_view.entry(o).or_default().push(idx);
        }
    }

    for v in &model.views {
        cameras.push_str(&format!(
            "{} PINHOLE {} {} {} {} {} {}\n",
            v.id,
            v.width,
            v.height,
            v.fx.as_f64(),
            v.fy.as_f64(),
            v.cx.as_f64(),
            v.cy.as_f64()
        ));
        let q = rotation_to_quaternion(&v.rotation);
        images.push_str(&format!(
            "{} {} {} {} {} {} {} {} {} {}\n",
            v.id,
            q.x.as_f64(),
            q.y.as_f64(),
            q.z.as_f64(),
            q.w.as_f64(),
            v.translation.x.as_f64(),
            v.translation.y.as_f64(),
            v.translation.z.as_f64(),
            v.id,
            v.image_name()
        ));
        let mut line = String::new();
        for &pidx in per_view.get(&v.id).map(|v| v.as_slice()).unwrap_or(&[]) {
            let p = &model.points[pidx];
            let cam_pt = v.world_to_camera(&p.position);
            let (px, py) = if cam_pt.z.as_f64() > 1e-6 {
                let uv = v.project_camera_point(&cam_pt);
                (uv.x.as_f64(), uv.y.as_f64())
            } else {
                (0.0, 0.0)
            };
            line.push_str(&format!("{px:.4} {py:.4} {} ", pidx + 1));
        }
        images.push_str(line.trim_end());
        images.push('\n');
    }

    for (idx, p) in model.points.iter().enumerate() {
        let to_byte = |c: T| (c.as_f64() * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8;
        points3d.push_str(&format!(
            "{} {} {} {} {} {} {} 0",
            idx + 1,
            p.position.x.as_f64(),
            p.position.y.as_f64(),
            p.position.z.as_f64(),
            to_byte(p.color.x),
            to_byte(p.color.y),
            to_byte(p.color.z)
        ));
        for &o in &p.observers {
            let pos_in_view = per_view
                .get(&o)
                .and_then(|list| list.iter().position(|&i| i == idx))
                .unwrap_or(0);
            points3d.push_str(&format!(" {o} {pos_in_view}"));
        }
        points3d.push('\n');
    }

    SparseModelText {
        cameras,
        images,
        points3d,
        matches: format_matches(&model.match_edges),
    }
}

/// Parses matches.txt lines `<id_a> <id_b> <count>`.
pub fn parse_matches(text: &str) -> Result<Vec<(u32, u32, u32)>> {
    let mut edges = Vec::new();
    for (line, raw) in content_lines(text) {
        let mut t = raw.split_whitespace();
        let a: u32 = field(&mut t, "matches.txt", line, "view id a")?;
        let b: u32 = field(&mut t, "matches.txt", line, "view id b")?;
        let w: u32 = field(&mut t, "matches.txt", line, "count")?;
        if t.next().is_some() {
            return Err(Error::parse(line, "matches.txt: trailing tokens"));
        }
        edges.push((a, b, w));
    }
    Ok(edges)
}

pub fn format_matches(edges: &[(u32, u32, u32)]) -> String {
    let mut s = String::new();
    for &(a, b, w) in edges {
        s.push_str(&format!("{a} {b} {w}\n"));
    }
    s
}

/// Reads a sparse model from a directory holding the COLMAP text files and
/// an optional matches.txt.
pub fn load_sparse_dir<T: Real>(dir: impl AsRef<Path>) -> Result<SparseModel<T>> {
    let dir = dir.as_ref();
    let read = |name: &str| -> Result<String> {
        let p = dir.join(name);
        std::fs::read_to_string(&p).map_err(|e| Error::io(p, e))
    };
    let mut model =
        parse_sparse_model(&read("cameras.txt")?, &read("images.txt")?, &read("points3D.txt")?)?;
    let matches_path = dir.join("matches.txt");
    if matches_path.exists() {
        let text = std::fs::read_to_string(&matches_path).map_err(|e| Error::io(matches_path, e))?;
        model.match_edges = parse_matches(&text)?;
        model.validate()?;
    }
    Ok(model)
}

/// Writes the COLMAP text files (and matches.txt when edges exist).
pub fn write_sparse_dir<T: Real>(dir: impl AsRef<Path>, model: &SparseModel<T>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let text = serialize_sparse_model(model);
    let write = |name: &str, content: &str| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, content).map_err(|e| Error::io(p, e))
    };
    write("cameras.txt", &text.cameras)?;
    write("images.txt", &text.images)?;
    write("points3D.txt", &text.points3d)?;
    if !model.match_edges.is_empty() {
        write("matches.txt", &text.matches)?;
    }
    Ok(())
}
