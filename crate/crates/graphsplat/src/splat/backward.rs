//! Reverse-mode gradients of the rasterizer.
//!
//! Upstream gradients arrive per pixel against the four output buffers; the
//! pass re-walks each pixel with the same traversal as the forward pass
//! (identical guard thresholds, identical early stop), converts buffer
//! gradients through the normalizations, and chains per-splat gradients back
//! to the Gaussian parameters. Clamped alphas and skipped contributions get
//! zero subgradient, matching what the forward pass actually computed.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};

use crate::num::Real;

use super::project::{normal_axis_and_sign, quaternion_to_rotation};
use super::raster::Rasterization;
use super::OPACITY_EPS;

/// Per-pixel gradients of a scalar loss against the rendered buffers.
#[derive(Debug, Clone)]
pub struct PixelGrads<T> {
    pub width: u32,
    pub height: u32,
    pub d_color: Vec<Vector3<T>>,
    pub d_depth: Vec<T>,
    pub d_normal: Vec<Vector3<T>>,
    pub d_opacity: Vec<T>,
}

impl<T: Real> PixelGrads<T> {
    pub fn zeros(width: u32, height: u32) -> Self {
        let n = (width * height) as usize;
        PixelGrads {
            width,
            height,
            d_color: vec![Vector3::zeros(); n],
            d_depth: vec![T::zero(); n],
            d_normal: vec![Vector3::zeros(); n],
            d_opacity: vec![T::zero(); n],
        }
    }

    pub fn pixel_index(&self, x: u32, y: u32) -> usize {
        (y * self.width + x) as usize
    }
}

/// Gradients of a scalar loss against every Gaussian parameter, plus the
/// per-view screen-space mean gradient magnitude used by densification.
#[derive(Debug, Clone)]
pub struct RenderGrads<T> {
    pub d_position: Vec<Vector3<T>>,
    pub d_rotation: Vec<Vector4<T>>,
    pub d_log_scales: Vec<Vector3<T>>,
    pub d_opacity_logit: Vec<T>,
    pub d_color: Vec<Vector3<T>>,
    pub mean2d_norm: Vec<T>,
    pub visible: Vec<bool>,
}

impl<T: Real> RenderGrads<T> {
    pub fn zeros(n: usize) -> Self {
        RenderGrads {
            d_position: vec![Vector3::zeros(); n],
            d_rotation: vec![Vector4::zeros(); n],
            d_log_scales: vec![Vector3::zeros(); n],
            d_opacity_logit: vec![T::zero(); n],
            d_color: vec![Vector3::zeros(); n],
            mean2d_norm: vec![T::zero(); n],
            visible: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.d_position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_position.is_empty()
    }

    /// `self += other * s` on the parameter gradients; screen-space norms
    /// add unscaled and visibility unions.
    pub fn accumulate(&mut self, other: &Self, s: T) {
        assert_eq!(self.len(), other.len());
        for i in 0..self.len() {
            self.d_position[i] += other.d_position[i] * s;
            self.d_rotation[i] += other.d_rotation[i] * s;
            self.d_log_scales[i] += other.d_log_scales[i] * s;
            self.d_opacity_logit[i] += other.d_opacity_logit[i] * s;
            self.d_color[i] += other.d_color[i] * s;
            self.mean2d_norm[i] += other.mean2d_norm[i];
            self.visible[i] = self.visible[i] || other.visible[i];
        }
    }
}

struct Contribution<T> {
    splat: u32,
    alpha: T,
    falloff: T,
    clamped: bool,
    trans: T,
}

impl<'a, T: Real> Rasterization<'a, T> {
    /// Backpropagates per-pixel buffer gradients to Gaussian parameters.
    pub fn backward(&self, up: &PixelGrads<T>) -> RenderGrads<T> {
        assert_eq!((up.width, up.height), (self.view.width, self.view.height));
        let n_splats = self.splats.len();
        let mut acc_color = vec![Vector3::<T>::zeros(); n_splats];
        let mut acc_depth = vec![T::zero(); n_splats];
        let mut acc_normal = vec![Vector3::<T>::zeros(); n_splats];
        let mut acc_alpha = vec![T::zero(); n_splats];
        let mut acc_mean2d = vec![Vector2::<T>::zeros(); n_splats];
        let mut acc_cov_inv = vec![Matrix2::<T>::zeros(); n_splats];

        let eps = T::of(OPACITY_EPS);
        let half = T::of(0.5);
        let mut walk: Vec<Contribution<T>> = Vec::new();
        for y in 0..self.view.height {
            for x in 0..self.view.width {
                let pix = up.pixel_index(x, y);
                let g_color = up.d_color[pix];
                let g_depth = up.d_depth[pix];
                let g_normal = up.d_normal[pix];
                let g_opacity = up.d_opacity[pix];
                if g_color == Vector3::zeros()
                    && g_depth == T::zero()
                    && g_normal == Vector3::zeros()
                    && g_opacity == T::zero()
                {
                    continue;
                }

                walk.clear();
                let mut weight_sum = T::zero();
                let mut depth_raw = T::zero();
                let mut normal_raw = Vector3::zeros();
                let trans_end = self.walk_pixel(x, y, |k, alpha, falloff, clamped, trans| {
                    let s = &self.splats[k];
                    let w = alpha * trans;
                    weight_sum += w;
                    depth_raw += s.depth * w;
                    normal_raw += s.normal * w;
                    walk.push(Contribution {
                        splat: k as u32,
                        alpha,
                        falloff,
                        clamped,
                        trans,
                    });
                });

                let opacity = weight_sum.min(T::one());
                let unclamped = weight_sum < T::one();
                let covered = opacity > eps;
                let g_depth_raw =
                    if covered { g_depth / opacity } else { T::zero() };
                let mut g_weight_sum = T::zero();
                if unclamped {
                    g_weight_sum = g_opacity;
                    if covered {
                        g_weight_sum -= g_depth * depth_raw / (opacity * opacity);
                    }
                }
                let g_normal_raw = if covered {
                    let norm = normal_raw.norm();
                    if norm > T::of(1e-30) {
                        let unit = normal_raw / norm;
                        (g_normal - unit * unit.dot(&g_normal)) / norm
                    } else {
                        Vector3::zeros()
                    }
                } else {
                    Vector3::zeros()
                };

                let px = T::of(x as f64 + 0.5);
                let py = T::of(y as f64 + 0.5);
                // suffix of downstream contributions: Σ_{j>i} φ_j·w_j plus
                // the background through final transmittance
                let mut suffix = self.background.dot(&g_color) * trans_end;
                for c in walk.iter().rev() {
                    let k = c.splat as usize;
                    let s = &self.splats[k];
                    let w = c.alpha * c.trans;
                    let phi = s.color.dot(&g_color)
                        + s.depth * g_depth_raw
                        + s.normal.dot(&g_normal_raw)
                        + g_weight_sum;
                    acc_color[k] += g_color * w;
                    acc_depth[k] += g_depth_raw * w;
                    acc_normal[k] += g_normal_raw * w;
                    let d_alpha_hat = phi * c.trans - suffix / (T::one() - c.alpha);
                    if !c.clamped {
                        acc_alpha[k] += c.falloff * d_alpha_hat;
                        // alpha_hat = α·exp(-q/2): d/dq = -alpha_hat/2
                        let d_q = -half * c.alpha * d_alpha_hat;
                        let delta = Vector2::new(px - s.mean2d.x, py - s.mean2d.y);
                        let a_delta = s.inv_cov * delta;
                        acc_mean2d[k] += a_delta * (c.alpha * d_alpha_hat);
                        acc_cov_inv[k] += (delta * delta.transpose()) * d_q;
                    }
                    suffix += phi * w;
                }
            }
        }

        let mut out = RenderGrads::zeros(self.set.len());
        for (k, s) in self.splats.iter().enumerate() {
            let src = s.source;
            out.visible[src] = true;
            out.mean2d_norm[src] = acc_mean2d[k].norm();
            out.d_color[src] += acc_color[k];
            let g = &self.set.gaussians[src];
            let alpha = g.opacity();
            out.d_opacity_logit[src] += acc_alpha[k] * alpha * (T::one() - alpha);

            let w_mat = self.view.rotation;
            let cam_pt = self.view.world_to_camera(&g.position);
            let j = self.view.projection_jacobian(&cam_pt);
            let quat_norm = g.rotation.norm();
            let q = g.rotation / quat_norm;
            let rot = quaternion_to_rotation(&g.rotation);
            let two = T::of(2.0);
            let d_mat = Matrix3::from_diagonal(&g.log_scales.map(|v| (two * v).exp()));
            let sigma = rot * d_mat * rot.transpose();
            let m_mat = w_mat * sigma * w_mat.transpose();

            // d(inverse): dL/dΣ2d = -A·(dL/dA)·A
            let d_cov2d = -(s.inv_cov * acc_cov_inv[k] * s.inv_cov);
            let d_m = j.transpose() * d_cov2d * j;
            let d_sigma = w_mat.transpose() * d_m * w_mat;
            let d_j = (d_cov2d * j * m_mat) * two;

            // camera-point gradient: screen mean, Jacobian's own dependence
            // on the camera point, and the depth channel
            let mut d_cam = j.transpose() * acc_mean2d[k];
            let (fx, fy) = (self.view.fx, self.view.fy);
            let z = cam_pt.z;
            let z2 = z * z;
            let z3 = z2 * z;
            d_cam.x += d_j[(0, 2)] * (-fx / z2);
            d_cam.y += d_j[(1, 2)] * (-fy / z2);
            d_cam.z += d_j[(0, 0)] * (-fx / z2)
                + d_j[(0, 2)] * (two * fx * cam_pt.x / z3)
                + d_j[(1, 1)] * (-fy / z2)
                + d_j[(1, 2)] * (two * fy * cam_pt.y / z3);
            d_cam.z += acc_depth[k];
            out.d_position[src] += w_mat.transpose() * d_cam;

            let mut d_rot = (d_sigma * rot * d_mat) * two;
            let rt_ds_r = rot.transpose() * d_sigma * rot;
            for axis in 0..3 {
                out.d_log_scales[src][axis] +=
                    rt_ds_r[(axis, axis)] * two * (two * g.log_scales[axis]).exp();
            }

            let (axis, sign) = normal_axis_and_sign(g, self.view);
            let d_col = (w_mat.transpose() * acc_normal[k]) * sign;
            for row in 0..3 {
                d_rot[(row, axis)] += d_col[row];
            }

            let d_unit_quat = rotation_quaternion_grad(&q, &d_rot);
            let projected = d_unit_quat - q * q.dot(&d_unit_quat);
            out.d_rotation[src] += projected / quat_norm;
        }
        out
    }
}

/// Frobenius contraction of `d_rot` with `∂R/∂q̂` for a unit quaternion in
/// `(w, x, y, z)` slots.
fn rotation_quaternion_grad<T: Real>(q: &Vector4<T>, d_rot: &Matrix3<T>) -> Vector4<T> {
    let (w, x, y, z) = (q.x, q.y, q.z, q.w);
    let two = T::of(2.0);
    let dw = Matrix3::new(
        T::zero(), -z, y,
        z, T::zero(), -x,
        -y, x, T::zero(),
    ) * two;
    let dx = Matrix3::new(
        T::zero(), y, z,
        y, -two * x, -w,
        z, w, -two * x,
    ) * two;
    let dy = Matrix3::new(
        -two * y, x, w,
        x, T::zero(), z,
        -w, z, -two * y,
    ) * two;
    let dz = Matrix3::new(
        -two * z, -w, x,
        w, -two * z, y,
        x, y, T::zero(),
    ) * two;
    Vector4::new(
        frob(&dw, d_rot),
        frob(&dx, d_rot),
        frob(&dy, d_rot),
        frob(&dz, d_rot),
    )
}

fn frob<T: Real>(a: &Matrix3<T>, b: &Matrix3<T>) -> T {
    let mut s = T::zero();
    for i in 0..3 {
        for jj in 0..3 {
            s += a[(i, jj)] * b[(i, jj)];
        }
    }
    s
}
