//! Cross-view photometric consistency through per-pixel plane warps.
//!
//! Each sampled reference pixel defines a local plane from the rendered
//! depth and normal buffers. The plane induces a homography into every
//! neighbor view; patches warped through it are compared against the
//! neighbor's observed image with normalized cross-correlation, and the
//! loss gradient flows back into the depth and normal buffers.

use nalgebra::{Matrix3, Vector3};

use crate::num::Real;
use crate::scene_io::image::GrayImage;
use crate::scene_io::CameraView;
use crate::splat::FrameBuffers;

/// Minimum rendered opacity for a pixel to anchor a plane.
pub const MV_OPACITY_GATE: f64 = 0.5;
/// Planes closer than this to the reference center are rejected.
pub const MIN_PLANE_DISTANCE: f64 = 1e-6;
/// Homogeneous coordinates with |w| below this are treated as at infinity.
pub const HOMOGENEOUS_EPS: f64 = 1e-12;
/// Floor applied to patch variances inside the correlation.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Loss value plus per-pixel upstream gradients for the depth and normal
/// buffers, averaged over the contributing (sample, neighbor) pairs.
#[derive(Debug, Clone)]
pub struct MultiViewGrads<T> {
    pub loss: T,
    pub d_depth: Vec<T>,
    pub d_normal: Vec<Vector3<T>>,
    pub pairs: usize,
}

fn intrinsics<T: Real>(view: &CameraView<T>) -> Matrix3<T> {
    Matrix3::new(
        view.fx,
        T::zero(),
        view.cx,
        T::zero(),
        view.fy,
        view.cy,
        T::zero(),
        T::zero(),
        T::one(),
    )
}

fn inverse_intrinsics<T: Real>(view: &CameraView<T>) -> Matrix3<T> {
    Matrix3::new(
        T::one() / view.fx,
        T::zero(),
        -view.cx / view.fx,
        T::zero(),
        T::one() / view.fy,
        -view.cy / view.fy,
        T::zero(),
        T::zero(),
        T::one(),
    )
}

/// Pose of `source` relative to `reference`: maps reference-camera points
/// to source-camera points.
pub fn relative_pose<T: Real>(
    reference: &CameraView<T>,
    source: &CameraView<T>,
) -> (Matrix3<T>, Vector3<T>) {
    let r_rel = source.rotation * reference.rotation.transpose();
    let t_rel = source.translation - r_rel * reference.translation;
    (r_rel, t_rel)
}

/// Homography sending reference pixels to source pixels for the plane
/// `normal . X + d = 0` expressed in the reference camera frame.
pub fn plane_homography<T: Real>(
    reference: &CameraView<T>,
    source: &CameraView<T>,
    normal: &Vector3<T>,
    d: T,
) -> Matrix3<T> {
    let (r_rel, t_rel) = relative_pose(reference, source);
    let metric = r_rel - t_rel * normal.transpose() / d;
    intrinsics(source) * metric * inverse_intrinsics(reference)
}

/// Normalized cross-correlation of two equal-length patches together with
/// its gradient with respect to the second patch.
pub fn ncc_with_grad<T: Real>(a: &[T], b: &[T]) -> (T, Vec<T>) {
    assert_eq!(a.len(), b.len());
    assert!(!a.is_empty());
    let n = T::of(a.len() as f64);
    let floor = T::of(VARIANCE_FLOOR);
    let mean = |v: &[T]| v.iter().fold(T::zero(), |s, &x| s + x) / n;
    let mu_a = mean(a);
    let mu_b = mean(b);
    let mut cov = T::zero();
    let mut var_a = T::zero();
    let mut var_b = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        let ca = x - mu_a;
        let cb = y - mu_b;
        cov += ca * cb;
        var_a += ca * ca;
        var_b += cb * cb;
    }
    cov /= n;
    var_a /= n;
    var_b /= n;
    let b_floored = var_b < floor;
    let sa = var_a.max(floor).sqrt();
    let sb = var_b.max(floor).sqrt();
    let ncc = cov / (sa * sb);
    let scale = T::one() / (n * sa * sb);
    let ratio = cov / (sb * sb);
    let grad = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let term = if b_floored {
                x - mu_a
            } else {
                (x - mu_a) - ratio * (y - mu_b)
            };
            term * scale
        })
        .collect();
    (ncc, grad)
}

struct WarpRecord<T> {
    value: T,
    gx: T,
    gy: T,
    u: Vector3<T>,
    ray: Vector3<T>,
    along: T,
}

/// Evaluates the cross-view consistency loss at the given reference pixels
/// and accumulates upstream gradients for the depth and normal buffers.
///
/// `samples` are reference pixel coordinates; pixels whose rendered opacity
/// is below the gate, whose patch leaves either image, or whose reference
/// patch is textureless contribute nothing.
pub fn multi_view_loss<T: Real>(
    reference: &CameraView<T>,
    buffers: &FrameBuffers<T>,
    reference_gray: &GrayImage<T>,
    neighbors: &[(&CameraView<T>, &GrayImage<T>)],
    patch: usize,
    samples: &[(u32, u32)],
) -> MultiViewGrads<T> {
    debug_assert!(patch % 2 == 1 && patch >= 3);
    let width = buffers.width;
    let height = buffers.height;
    let half = (patch / 2) as u32;
    let inv_k_ref = inverse_intrinsics(reference);
    let gate = T::of(MV_OPACITY_GATE);
    let floor = T::of(VARIANCE_FLOOR);

    let mut d_depth = vec![T::zero(); (width * height) as usize];
    let mut d_normal = vec![Vector3::zeros(); (width * height) as usize];
    let mut loss = T::zero();
    let mut pairs = 0usize;

    let mut patch_a: Vec<T> = Vec::with_capacity(patch * patch);
    let mut records: Vec<WarpRecord<T>> = Vec::with_capacity(patch * patch);

    for &(px, py) in samples {
        if px < half || py < half || px + half >= width || py + half >= height {
            continue;
        }
        let idx = buffers.pixel_index(px, py);
        if buffers.accum_opacity[idx] < gate {
            continue;
        }
        let depth = buffers.depth[idx];
        if depth <= T::zero() {
            continue;
        }
        let normal = buffers.normal[idx];
        if normal.norm() < T::of(0.5) {
            continue;
        }
        let ray_ref = inv_k_ref
            * Vector3::new(
                T::of(px as f64) + T::of(0.5),
                T::of(py as f64) + T::of(0.5),
                T::one(),
            );
        let d = -depth * normal.dot(&ray_ref);
        if d.abs() < T::of(MIN_PLANE_DISTANCE) {
            continue;
        }

        patch_a.clear();
        let mut var_a = T::zero();
        {
            let mut sum = T::zero();
            for qy in py - half..=py + half {
                for qx in px - half..=px + half {
                    let v = reference_gray.get(qx, qy);
                    patch_a.push(v);
                    sum += v;
                }
            }
            let mu = sum / T::of(patch_a.len() as f64);
            for &v in &patch_a {
                var_a += (v - mu) * (v - mu);
            }
            var_a /= T::of(patch_a.len() as f64);
        }
        if var_a < floor {
            continue;
        }

        let mut grad_d = T::zero();
        let mut grad_n = Vector3::zeros();

        for &(src_view, src_gray) in neighbors {
            let (r_rel, t_rel) = relative_pose(reference, src_view);
            let k_src = intrinsics(src_view);
            let h0 = k_src * r_rel * inv_k_ref;
            let kt = k_src * t_rel;

            records.clear();
            let mut valid = true;
            'patch: for qy in py - half..=py + half {
                for qx in px - half..=px + half {
                    let q = Vector3::new(
                        T::of(qx as f64) + T::of(0.5),
                        T::of(qy as f64) + T::of(0.5),
                        T::one(),
                    );
                    let ray = inv_k_ref * q;
                    let along = normal.dot(&ray);
                    let u = h0 * q - kt * (along / d);
                    if u.z.abs() < T::of(HOMOGENEOUS_EPS) {
                        valid = false;
                        break 'patch;
                    }
                    let wx = u.x / u.z;
                    let wy = u.y / u.z;
                    match src_gray.sample_with_grad(wx, wy) {
                        Some((value, gx, gy)) => records.push(WarpRecord {
                            value,
                            gx,
                            gy,
                            u,
                            ray,
                            along,
                        }),
                        None => {
                            valid = false;
                            break 'patch;
                        }
                    }
                }
            }
            if !valid {
                continue;
            }

            let patch_b: Vec<T> = records.iter().map(|r| r.value).collect();
            let (ncc, d_ncc) = ncc_with_grad(&patch_a, &patch_b);
            loss += T::one() - ncc;
            pairs += 1;

            for (rec, &g_ncc) in records.iter().zip(&d_ncc) {
                let gb = -g_ncc;
                let gwx = gb * rec.gx;
                let gwy = gb * rec.gy;
                let z = rec.u.z;
                let gu = Vector3::new(
                    gwx / z,
                    gwy / z,
                    -(rec.u.x * gwx + rec.u.y * gwy) / (z * z),
                );
                let ga = gu.dot(&kt);
                grad_n -= rec.ray * (ga / d);
                grad_d += ga * rec.along / (d * d);
            }
        }

        d_depth[idx] += grad_d * (-normal.dot(&ray_ref));
        d_normal[idx] += grad_n - ray_ref * (grad_d * depth);
    }

    if pairs > 0 {
        let inv = T::one() / T::of(pairs as f64);
        loss *= inv;
        for v in &mut d_depth {
            *v *= inv;
        }
        for v in &mut d_normal {
            *v *= inv;
        }
    }
    MultiViewGrads {
        loss,
        d_depth,
        d_normal,
        pairs,
    }
}
