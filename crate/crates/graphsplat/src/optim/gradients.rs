//! One training iteration's forward/backward pass: render a view, compare
//! against the observed image, optionally add cross-view consistency, and
//! backpropagate everything to Gaussian parameters in a single sweep.

use rand::Rng;

use crate::error::{Error, Result};
use crate::num::Real;
use crate::optim::loss::{l1_and_grad, ssim_and_grad};
use crate::optim::mv::multi_view_loss;
use crate::optim::TrainConfig;
use crate::scene_io::image::GrayImage;
use crate::scene_io::{CameraView, Image};
use crate::splat::backward::{PixelGrads, RenderGrads};
use crate::splat::raster::Rasterization;
use crate::splat::GaussianSet;

/// Loss breakdown for one iteration. `ssim` is the similarity value, not
/// its loss contribution; `mv` is the raw cross-view loss before weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationStats<T> {
    pub total: T,
    pub l1: T,
    pub ssim: T,
    pub mv: T,
    pub mv_pairs: usize,
}

/// Photometric-only gradient pass.
pub fn compute_gradients<T: Real>(
    set: &GaussianSet<T>,
    view: &CameraView<T>,
    target: &Image<T>,
    cfg: &TrainConfig<T>,
) -> Result<(RenderGrads<T>, IterationStats<T>)> {
    compute_gradients_inner(set, view, target, cfg, &[], 0, &mut NoRng)
}

/// Gradient pass with the cross-view term sampled at `cfg.mv_pixel_samples`
/// random reference pixels against the given neighbor views.
pub fn compute_gradients_with_mv<T: Real, R: Rng>(
    set: &GaussianSet<T>,
    view: &CameraView<T>,
    target: &Image<T>,
    cfg: &TrainConfig<T>,
    neighbors: &[(&CameraView<T>, &GrayImage<T>)],
    rng: &mut R,
) -> Result<(RenderGrads<T>, IterationStats<T>)> {
    compute_gradients_inner(set, view, target, cfg, neighbors, cfg.mv_pixel_samples, rng)
}

fn compute_gradients_inner<T: Real, R: Rng>(
    set: &GaussianSet<T>,
    view: &CameraView<T>,
    target: &Image<T>,
    cfg: &TrainConfig<T>,
    neighbors: &[(&CameraView<T>, &GrayImage<T>)],
    pixel_samples: usize,
    rng: &mut R,
) -> Result<(RenderGrads<T>, IterationStats<T>)> {
    let rast = Rasterization::prepare(set, view, cfg.background)?;
    let buffers = rast.buffers();

    let (l1, g_l1) = l1_and_grad(&buffers.color, target)?;
    let mut up = PixelGrads::zeros(view.width, view.height);
    let keep = T::one() - cfg.lambda;
    let mut total;
    let ssim;
    if cfg.lambda > T::zero() {
        let (s, g_ssim) = ssim_and_grad(&buffers.color, target)?;
        ssim = s;
        total = keep * l1 + cfg.lambda * (T::one() - s);
        for (dst, (a, b)) in up.d_color.iter_mut().zip(g_l1.iter().zip(&g_ssim)) {
            *dst = a * keep - b * cfg.lambda;
        }
    } else {
        ssim = T::one();
        total = l1;
        up.d_color.copy_from_slice(&g_l1);
    }

    let mut mv = T::zero();
    let mut mv_pairs = 0;
    if !neighbors.is_empty() && pixel_samples > 0 {
        let samples: Vec<(u32, u32)> = (0..pixel_samples)
            .map(|_| (rng.gen_range(0..view.width), rng.gen_range(0..view.height)))
            .collect();
        let gray = target.to_gray();
        let out = multi_view_loss(view, buffers, &gray, neighbors, cfg.mv_patch, &samples);
        mv = out.loss;
        mv_pairs = out.pairs;
        if out.pairs > 0 {
            total += cfg.mv_weight * out.loss;
            for (dst, src) in up.d_depth.iter_mut().zip(&out.d_depth) {
                *dst += cfg.mv_weight * *src;
            }
            for (dst, src) in up.d_normal.iter_mut().zip(&out.d_normal) {
                *dst += *src * cfg.mv_weight;
            }
        }
    }

    let grads = rast.backward(&up);
    check_finite(&grads)?;
    Ok((
        grads,
        IterationStats {
            total,
            l1,
            ssim,
            mv,
            mv_pairs,
        },
    ))
}

fn check_finite<T: Real>(grads: &RenderGrads<T>) -> Result<()> {
    for i in 0..grads.len() {
        let bad = if !grads.d_position[i].iter().all(|v| v.is_finite()) {
            Some("position")
        } else if !grads.d_rotation[i].iter().all(|v| v.is_finite()) {
            Some("rotation")
        } else if !grads.d_log_scales[i].iter().all(|v| v.is_finite()) {
            Some("log_scales")
        } else if !grads.d_opacity_logit[i].is_finite() {
            Some("opacity")
        } else if !grads.d_color[i].iter().all(|v| v.is_finite()) {
            Some("color")
        } else {
            None
        };
        if let Some(name) = bad {
            return Err(Error::Degenerate(format!(
                "non-finite {name} gradient for gaussian {i}"
            )));
        }
    }
    Ok(())
}

/// Stand-in for the photometric-only path, which never draws samples.
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("photometric pass must not sample")
    }

    fn next_u64(&mut self) -> u64 {
        unreachable!("photometric pass must not sample")
    }

    fn fill_bytes(&mut self, _dest: &mut [u8]) {
        unreachable!("photometric pass must not sample")
    }

    fn try_fill_bytes(&mut self, _dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        unreachable!("photometric pass must not sample")
    }
}
