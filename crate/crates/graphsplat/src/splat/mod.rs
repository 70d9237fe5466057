//! Anisotropic 3D Gaussians and the differentiable CPU rasterizer.

pub mod backward;
pub mod project;
pub mod raster;
pub mod tggs;

use nalgebra::{Vector3, Vector4};

use crate::error::{Error, Result};
use crate::num::Real;
use crate::scene_io::Image;

pub use project::{build_covariance, gaussian_normal, project_gaussian, Projected2D};
pub use raster::{rasterize, Rasterization};

/// Camera-space depth below which Gaussians are culled.
pub const Z_NEAR: f64 = 0.01;
/// Upper clamp on a single splat's per-pixel opacity contribution.
pub const ALPHA_CLAMP: f64 = 0.99;
/// Contributions below this opacity are skipped entirely.
pub const ALPHA_SKIP: f64 = 1.0 / 255.0;
/// Front-to-back traversal stops once transmittance falls below this.
pub const TRANSMITTANCE_STOP: f64 = 1e-4;
/// Low-pass dilation added to the diagonal of every projected covariance, px².
pub const COV_DILATION: f64 = 0.3;
/// Depth/normal buffers are normalized only where accumulated opacity
/// exceeds this; below it they are left at zero.
pub const OPACITY_EPS: f64 = 1e-4;

/// One anisotropic Gaussian. The covariance is `R·diag(exp(log_scales))²·Rᵀ`
/// with `R` built from `rotation`, a quaternion stored as `(w, x, y, z)`.
/// Opacity is `sigmoid(opacity_logit)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian<T> {
    pub position: Vector3<T>,
    pub rotation: Vector4<T>,
    pub log_scales: Vector3<T>,
    pub opacity_logit: T,
    pub color: Vector3<T>,
}

impl<T: Real> Gaussian<T> {
    /// A unit-scale Gaussian at a position, used as a construction base.
    pub fn at(position: Vector3<T>) -> Self {
        Gaussian {
            position,
            rotation: Vector4::new(T::one(), T::zero(), T::zero(), T::zero()),
            log_scales: Vector3::zeros(),
            opacity_logit: T::zero(),
            color: Vector3::new(T::of(0.5), T::of(0.5), T::of(0.5)),
        }
    }

    #[inline]
    pub fn opacity(&self) -> T {
        sigmoid(self.opacity_logit)
    }

    pub fn scales(&self) -> Vector3<T> {
        self.log_scales.map(|s| s.exp())
    }

    pub fn max_scale(&self) -> T {
        let s = self.scales();
        s.x.max(s.y).max(s.z)
    }

    fn check_finite(&self, index: usize) -> Result<()> {
        let finite = self.position.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.log_scales.iter().all(|v| v.exp().is_finite())
            && self.opacity_logit.is_finite()
            && self.color.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Argument(format!("gaussian {index} has a non-finite parameter")));
        }
        if self.rotation.norm() < T::of(1e-9) {
            return Err(Error::Argument(format!("gaussian {index} has a zero quaternion")));
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Inverse of [`sigmoid`] for initialization from target opacities.
#[inline]
pub fn logit<T: Real>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

/// A trained or ground-truth scene: the Gaussians plus the camera-derived
/// scene anchor (center `c`, radius `r`) used for scale thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSet<T> {
    pub gaussians: Vec<Gaussian<T>>,
    pub center: Vector3<T>,
    pub radius: T,
}

impl<T: Real> GaussianSet<T> {
    pub fn new(gaussians: Vec<Gaussian<T>>, center: Vector3<T>, radius: T) -> Self {
        GaussianSet { gaussians, center, radius }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > T::zero()) || !self.radius.is_finite() {
            return Err(Error::Argument("scene radius must be positive and finite".into()));
        }
        if !self.center.iter().all(|v| v.is_finite()) {
            return Err(Error::Argument("scene center must be finite".into()));
        }
        for (i, g) in self.gaussians.iter().enumerate() {
            g.check_finite(i)?;
        }
        Ok(())
    }

    /// Scene anchor from camera positions: `c` is their mean and `r` the
    /// maximum camera distance from `c` (floored to stay positive).
    pub fn anchor_from_cameras(centers: &[Vector3<T>]) -> (Vector3<T>, T) {
        assert!(!centers.is_empty());
        let mut c = Vector3::zeros();
        for p in centers {
            c += p;
        }
        c /= T::of(centers.len() as f64);
        let mut r = T::zero();
        for p in centers {
            r = r.max((p - c).norm());
        }
        (c, r.max(T::of(1e-3)))
    }
}

/// Output of one render pass. `depth` is the alpha-weighted mean
/// camera-space z and `normal` the unit alpha-blended camera-frame normal;
/// both are zero where `accum_opacity <= OPACITY_EPS`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBuffers<T> {
    pub width: u32,
    pub height: u32,
    pub color: Image<T>,
    pub depth: Vec<T>,
    pub normal: Vec<Vector3<T>>,
    pub accum_opacity: Vec<T>,
}

impl<T: Real> FrameBuffers<T> {
    pub fn new(width: u32, height: u32, background: Vector3<T>) -> Self {
        let n = (width * height) as usize;
        FrameBuffers {
            width,
            height,
            color: Image::from_fn(width, height, |_, _| background),
            depth: vec![T::zero(); n],
            normal: vec![Vector3::zeros(); n],
            accum_opacity: vec![T::zero(); n],
        }
    }

    #[inline]
    pub fn pixel_index(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y * self.width + x) as usize
    }
}
