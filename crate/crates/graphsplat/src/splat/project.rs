//! Covariance construction and EWA-style projection of Gaussians.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};

use crate::num::Real;
use crate::scene_io::CameraView;

use super::{Gaussian, COV_DILATION, Z_NEAR};

/// Quaternion `(w, x, y, z)` to a rotation matrix. Normalizes first, so
/// callers may hold slightly drifted quaternions between updates.
pub fn quaternion_to_rotation<T: Real>(q: &Vector4<T>) -> Matrix3<T> {
    let n = q.norm();
    let (w, x, y, z) = (q.x / n, q.y / n, q.z / n, q.w / n);
    let two = T::of(2.0);
    Matrix3::new(
        T::one() - two * (y * y + z * z),
        two * (x * y - w * z),
        two * (x * z + w * y),
        two * (x * y + w * z),
        T::one() - two * (x * x + z * z),
        two * (y * z - w * x),
        two * (x * z - w * y),
        two * (y * z + w * x),
        T::one() - two * (x * x + y * y),
    )
}

/// World-space covariance `R·diag(exp(log_scales))²·Rᵀ`.
pub fn build_covariance<T: Real>(rotation: &Vector4<T>, log_scales: &Vector3<T>) -> Matrix3<T> {
    let r = quaternion_to_rotation(rotation);
    let two = T::of(2.0);
    let d = Matrix3::from_diagonal(&log_scales.map(|s| (two * s).exp()));
    r * d * r.transpose()
}

/// A Gaussian splatted into one view.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected2D<T> {
    pub mean2d: Vector2<T>,
    pub cov2d: Matrix2<T>,
    pub depth: T,
    pub source: usize,
}

/// Projects one Gaussian. Returns `None` when it is culled: camera-space
/// depth at or below [`Z_NEAR`], or the 3σ extent of the dilated footprint
/// missing the image rectangle entirely.
pub fn project_gaussian<T: Real>(
    g: &Gaussian<T>,
    view: &CameraView<T>,
    source: usize,
) -> Option<Projected2D<T>> {
    let cam_pt = view.world_to_camera(&g.position);
    if cam_pt.z <= T::of(Z_NEAR) {
        return None;
    }
    let mean2d = view.project_camera_point(&cam_pt);
    let j = view.projection_jacobian(&cam_pt);
    let w = view.rotation;
    let cov_cam = w * build_covariance(&g.rotation, &g.log_scales) * w.transpose();
    let mut cov2d = j * cov_cam * j.transpose();
    let dilation = T::of(COV_DILATION);
    cov2d[(0, 0)] += dilation;
    cov2d[(1, 1)] += dilation;

    // conservative 3σ axis-aligned extent: max |δx| on the 3σ ellipse is
    // 3·sqrt(Σxx), so a miss here bounds the contribution by exp(-4.5)·α
    let three = T::of(3.0);
    let rx = three * cov2d[(0, 0)].sqrt();
    let ry = three * cov2d[(1, 1)].sqrt();
    let (w_px, h_px) = (T::of(view.width as f64), T::of(view.height as f64));
    if mean2d.x + rx < T::zero()
        || mean2d.x - rx > w_px
        || mean2d.y + ry < T::zero()
        || mean2d.y - ry > h_px
    {
        return None;
    }

    Some(Projected2D { mean2d, cov2d, depth: cam_pt.z, source })
}

/// Shortest-axis index and camera-facing sign for a Gaussian's normal in
/// `view`. Equal shortest scales break toward the lowest axis index.
pub(crate) fn normal_axis_and_sign<T: Real>(
    g: &Gaussian<T>,
    view: &CameraView<T>,
) -> (usize, T) {
    let s = g.scales();
    let mut axis = 0;
    if s.y < s[axis] {
        axis = 1;
    }
    if s.z < s[axis] {
        axis = 2;
    }
    let r = quaternion_to_rotation(&g.rotation);
    let n_cam = view.rotation * r.column(axis);
    let ray = view.world_to_camera(&g.position);
    let sign = if n_cam.dot(&ray) > T::zero() { -T::one() } else { T::one() };
    (axis, sign)
}

/// Shortest-axis surface normal of a Gaussian in the view's camera frame,
/// flipped to face the camera.
pub fn gaussian_normal<T: Real>(g: &Gaussian<T>, view: &CameraView<T>) -> Vector3<T> {
    let (axis, sign) = normal_axis_and_sign(g, view);
    let r = quaternion_to_rotation(&g.rotation);
    (view.rotation * r.column(axis)) * sign
}
