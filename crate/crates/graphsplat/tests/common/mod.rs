//! Shared fixtures for the integration suites: an independently coded
//! reference compositor, finite-difference helpers, and scene builders.

#![allow(dead_code)]

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use graphsplat::scene_io::synth::{look_at, random_unit_quaternion};
use graphsplat::scene_io::CameraView;
use graphsplat::splat::{
    logit, Gaussian, GaussianSet, ALPHA_CLAMP, ALPHA_SKIP, COV_DILATION, OPACITY_EPS,
    TRANSMITTANCE_STOP, Z_NEAR,
};
use graphsplat::traj_graph::ConnectivityGraph;

/// Reference render produced by the brute-force compositor.
pub struct OracleBuffers {
    pub color: Vec<Vector3<f64>>,
    pub depth: Vec<f64>,
    pub normal: Vec<Vector3<f64>>,
    pub opacity: Vec<f64>,
}

struct OracleSplat {
    depth: f64,
    position: Vector3<f64>,
    source: usize,
    mean: Vector2<f64>,
    inv_cov: Matrix2<f64>,
    alpha: f64,
    color: Vector3<f64>,
    normal: Vector3<f64>,
}

/// Per-pixel reference compositor: no spatial binning, every splat is
/// evaluated at every pixel. Shares only the documented rules with the
/// production rasterizer — near-plane and off-screen culling, the alpha
/// clamp/skip thresholds, the transmittance stop, and the buffer
/// normalization — while all projection math is written independently.
pub fn brute_force_render(
    set: &GaussianSet<f64>,
    view: &CameraView<f64>,
    background: Vector3<f64>,
) -> OracleBuffers {
    let mut splats = Vec::new();
    for (i, g) in set.gaussians.iter().enumerate() {
        let cam = view.rotation * g.position + view.translation;
        if cam.z <= Z_NEAR {
            continue;
        }
        let alpha = g.opacity();
        if alpha <= ALPHA_SKIP {
            continue;
        }
        let mean = Vector2::new(
            view.fx * cam.x / cam.z + view.cx,
            view.fy * cam.y / cam.z + view.cy,
        );
        // rotation through nalgebra's unit quaternion; slot order (w,x,y,z)
        let q = g.rotation;
        let rot = UnitQuaternion::from_quaternion(Quaternion::new(q.x, q.y, q.z, q.w))
            .to_rotation_matrix()
            .into_inner();
        let var = g.log_scales.map(|l| (2.0 * l).exp());
        let sigma = rot * Matrix3::from_diagonal(&var) * rot.transpose();
        let z2 = cam.z * cam.z;
        let j = Matrix2x3::new(
            view.fx / cam.z,
            0.0,
            -view.fx * cam.x / z2,
            0.0,
            view.fy / cam.z,
            -view.fy * cam.y / z2,
        );
        let jw = j * view.rotation;
        let mut cov2 = jw * sigma * jw.transpose();
        cov2[(0, 0)] += COV_DILATION;
        cov2[(1, 1)] += COV_DILATION;
        let rx = 3.0 * cov2[(0, 0)].sqrt();
        let ry = 3.0 * cov2[(1, 1)].sqrt();
        if mean.x + rx < 0.0
            || mean.x - rx > view.width as f64
            || mean.y + ry < 0.0
            || mean.y - ry > view.height as f64
        {
            continue;
        }
        let scales = g.scales();
        let mut axis = 0;
        if scales.y < scales[axis] {
            axis = 1;
        }
        if scales.z < scales[axis] {
            axis = 2;
        }
        let n_cam = view.rotation * rot.column(axis);
        let normal = if n_cam.dot(&cam) > 0.0 { -n_cam } else { n_cam };
        splats.push(OracleSplat {
            depth: cam.z,
            position: g.position,
            source: i,
            mean,
            inv_cov: cov2.try_inverse().expect("dilated covariance inverts"),
            alpha,
            color: g.color,
            normal,
        });
    }
    splats.sort_by(|a, b| {
        (a.depth, a.position.x, a.position.y, a.position.z, a.source)
            .partial_cmp(&(b.depth, b.position.x, b.position.y, b.position.z, b.source))
            .unwrap()
    });

    let n_px = (view.width * view.height) as usize;
    let mut out = OracleBuffers {
        color: vec![background; n_px],
        depth: vec![0.0; n_px],
        normal: vec![Vector3::zeros(); n_px],
        opacity: vec![0.0; n_px],
    };
    for y in 0..view.height {
        for x in 0..view.width {
            let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            let idx = (y * view.width + x) as usize;
            let mut trans = 1.0;
            let mut color = Vector3::zeros();
            let mut depth_raw = 0.0;
            let mut normal_raw = Vector3::zeros();
            let mut accum = 0.0;
            for s in &splats {
                let d = p - s.mean;
                let qf = (s.inv_cov * d).dot(&d);
                let raw = s.alpha * (-0.5 * qf).exp();
                let a = raw.min(ALPHA_CLAMP);
                if a < ALPHA_SKIP {
                    continue;
                }
                let w = a * trans;
                color += s.color * w;
                depth_raw += s.depth * w;
                normal_raw += s.normal * w;
                accum += w;
                trans *= 1.0 - a;
                if trans < TRANSMITTANCE_STOP {
                    break;
                }
            }
            color += background * trans;
            let opacity = accum.min(1.0);
            out.color[idx] = color;
            out.opacity[idx] = opacity;
            if opacity > OPACITY_EPS {
                out.depth[idx] = depth_raw / opacity;
                let norm = normal_raw.norm();
                out.normal[idx] = if norm > 1e-30 {
                    normal_raw / norm
                } else {
                    Vector3::new(0.0, 0.0, -1.0)
                };
            }
        }
    }
    out
}

/// Central finite difference of `f` at `x`.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Relative error with an absolute floor for near-zero pairs.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Camera on a ring of the given radius, looking at the origin.
pub fn ring_view(id: u32, index: usize, count: usize, distance: f64, size: u32) -> CameraView<f64> {
    let theta = index as f64 / count as f64 * std::f64::consts::TAU;
    let eye = Vector3::new(
        distance * theta.sin(),
        0.3 * distance,
        distance * theta.cos(),
    );
    let (rotation, translation) = look_at(&eye, &Vector3::zeros(), &Vector3::new(0.0, 1.0, 0.0));
    CameraView {
        id,
        fx: size as f64 * 0.9,
        fy: size as f64 * 0.9,
        cx: size as f64 / 2.0,
        cy: size as f64 / 2.0,
        rotation,
        translation,
        width: size,
        height: size,
        image_ref: None,
    }
}

/// Random Gaussians in a ball of radius ~1 at the origin, with opacities
/// inside the given range and footprints a few pixels wide from the ring
/// cameras.
pub fn random_gaussian_set(
    rng: &mut ChaCha8Rng,
    n: usize,
    alpha_lo: f64,
    alpha_hi: f64,
) -> GaussianSet<f64> {
    let gaussians = (0..n)
        .map(|_| {
            let position = loop {
                let p = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                if p.norm() <= 1.0 {
                    break p;
                }
            };
            Gaussian {
                position,
                rotation: random_unit_quaternion(rng),
                log_scales: Vector3::new(
                    rng.gen_range(0.04f64..0.3).ln(),
                    rng.gen_range(0.04f64..0.3).ln(),
                    rng.gen_range(0.04f64..0.3).ln(),
                ),
                opacity_logit: logit(rng.gen_range(alpha_lo..alpha_hi)),
                color: Vector3::new(
                    rng.gen_range(0.05..0.95),
                    rng.gen_range(0.05..0.95),
                    rng.gen_range(0.05..0.95),
                ),
            }
        })
        .collect();
    GaussianSet::new(gaussians, Vector3::zeros(), 4.0)
}

/// Random connected weighted graph: a random spanning tree plus extra
/// random edges, weights in 1..50.
pub fn random_connected_graph(rng: &mut ChaCha8Rng, n: usize) -> ConnectivityGraph {
    let ids: Vec<u32> = (0..n as u32).collect();
    let mut edges: Vec<(u32, u32, u32)> = (1..n as u32)
        .map(|v| (rng.gen_range(0..v), v, rng.gen_range(1..50)))
        .collect();
    for _ in 0..rng.gen_range(0..2 * n) {
        let a = rng.gen_range(0..n as u32);
        let b = rng.gen_range(0..n as u32);
        if a != b {
            edges.push((a, b, rng.gen_range(1..50)));
        }
    }
    ConnectivityGraph::from_edges(ids, &edges).unwrap()
}

/// True when the member ids form one connected component of the graph
/// restricted to themselves.
pub fn is_connected_subset(graph: &ConnectivityGraph, members: &[u32]) -> bool {
    if members.is_empty() {
        return false;
    }
    let member_set: std::collections::BTreeSet<u32> = members.iter().copied().collect();
    let mut seen = std::collections::BTreeSet::new();
    let mut queue = std::collections::VecDeque::new();
    seen.insert(members[0]);
    queue.push_back(members[0]);
    while let Some(id) = queue.pop_front() {
        let slot = graph.slot(id).unwrap();
        for &(nbr_slot, _) in graph.neighbors(slot) {
            let nbr = graph.view_ids()[nbr_slot];
            if member_set.contains(&nbr) && seen.insert(nbr) {
                queue.push_back(nbr);
            }
        }
    }
    seen.len() == members.len()
}
