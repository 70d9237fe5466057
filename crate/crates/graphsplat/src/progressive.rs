//! Opacity-budgeted compositing of independently trained region models.
//!
//! Regions are ranked once by how well their renders agree with a coarse
//! global model; at render time each pixel takes color from the strongest
//! regions until an opacity budget is spent, which suppresses double
//! counting where regions overlap.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::num::Real;
use crate::optim::loss::{l1_and_grad, ssim_and_grad};
use crate::scene_io::{CameraView, Image};
use crate::splat::raster::rasterize;
use crate::splat::{FrameBuffers, GaussianSet, OPACITY_EPS};

/// Ranking and compositing parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgressiveConfig<T> {
    /// Blend between mean-absolute agreement and structural similarity in
    /// the region ranking score.
    pub lambda: T,
    /// Per-pixel opacity budget: lower-ranked regions stop contributing
    /// once the accumulated opacity of better ones reaches it.
    pub beta: T,
    /// Color for pixels no region covers.
    pub background: Vector3<T>,
}

impl<T: Real> Default for ProgressiveConfig<T> {
    fn default() -> Self {
        ProgressiveConfig {
            lambda: T::of(0.5),
            beta: T::of(0.5),
            background: Vector3::zeros(),
        }
    }
}

impl<T: Real> ProgressiveConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < T::zero() || self.lambda > T::one() {
            return Err(Error::Argument(format!(
                "lambda must be in [0, 1], got {}",
                self.lambda.as_f64()
            )));
        }
        if self.beta <= T::zero() || self.beta > T::one() {
            return Err(Error::Argument(format!(
                "beta must be in (0, 1], got {}",
                self.beta.as_f64()
            )));
        }
        for (i, c) in self.background.iter().enumerate() {
            if *c < T::zero() || *c > T::one() {
                return Err(Error::Argument(format!(
                    "background channel {i} must be in [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Agreement between a region render and the global render of the same
/// view: `(1 - lambda) * (1 - mean|diff|) + lambda * ssim`.
pub fn matching_score<T: Real>(region: &Image<T>, global: &Image<T>, lambda: T) -> Result<T> {
    let (mean_abs, _) = l1_and_grad(region, global)?;
    let (ssim, _) = ssim_and_grad(region, global)?;
    Ok((T::one() - lambda) * (T::one() - mean_abs) + lambda * ssim)
}

/// Orders regions by descending mean agreement with the global model over
/// the given views. Ties keep the lower region index first.
pub fn rank_regions<T: Real>(
    regions: &[GaussianSet<T>],
    global: &GaussianSet<T>,
    views: &[&CameraView<T>],
    cfg: &ProgressiveConfig<T>,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    if views.is_empty() {
        return Err(Error::Argument("ranking needs at least one view".into()));
    }
    let black = Vector3::zeros();
    let mut scores = vec![T::zero(); regions.len()];
    for view in views {
        let reference = rasterize(global, view, black)?;
        for (r, set) in regions.iter().enumerate() {
            let rendered = rasterize(set, view, black)?;
            scores[r] += matching_score(&rendered.color, &reference.color, cfg.lambda)?;
        }
    }
    let mut order: Vec<usize> = (0..regions.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    Ok(order)
}

/// The per-pixel budget gate: region opacities in rank order contribute
/// fully until the running total reaches `beta`, after which they are
/// silenced.
pub fn progressive_weights<T: Real>(opacities: &[T], beta: T) -> Vec<T> {
    let mut running = T::zero();
    opacities
        .iter()
        .map(|&o| {
            if running < beta {
                running += o;
                o
            } else {
                T::zero()
            }
        })
        .collect()
}

/// Composites region renders in rank order under the opacity budget.
/// Pixels whose total admitted weight stays below the coverage threshold
/// fall back to the configured background.
pub fn progressive_render<T: Real>(
    ranked: &[&GaussianSet<T>],
    view: &CameraView<T>,
    cfg: &ProgressiveConfig<T>,
) -> Result<Image<T>> {
    cfg.validate()?;
    if ranked.is_empty() {
        return Err(Error::Argument("no regions to composite".into()));
    }
    let black = Vector3::zeros();
    let layers: Vec<FrameBuffers<T>> = ranked
        .iter()
        .map(|set| rasterize(set, view, black))
        .collect::<Result<_>>()?;

    let mut out = Image::from_fn(view.width, view.height, |_, _| cfg.background);
    let eps = T::of(OPACITY_EPS);
    let mut opacities = vec![T::zero(); ranked.len()];
    for y in 0..view.height {
        for x in 0..view.width {
            let idx = layers[0].pixel_index(x, y);
            for (k, layer) in layers.iter().enumerate() {
                opacities[k] = layer.accum_opacity[idx];
            }
            let weights = progressive_weights(&opacities, cfg.beta);
            let total: T = weights.iter().fold(T::zero(), |s, &w| s + w);
            if total > eps {
                let mut color = Vector3::zeros();
                for (k, layer) in layers.iter().enumerate() {
                    if weights[k] > T::zero() {
                        color += layer.color.get(x, y) * weights[k];
                    }
                }
                out.set(x, y, color / total);
            }
        }
    }
    Ok(out)
}

/// Baseline merge: every region's Gaussians in one set, rasterized jointly.
pub fn naive_merge_render<T: Real>(
    sets: &[&GaussianSet<T>],
    view: &CameraView<T>,
    background: Vector3<T>,
) -> Result<FrameBuffers<T>> {
    if sets.is_empty() {
        return Err(Error::Argument("no regions to merge".into()));
    }
    let mut gaussians = Vec::new();
    let mut center = Vector3::zeros();
    let mut radius = T::zero();
    for set in sets {
        gaussians.extend(set.gaussians.iter().cloned());
        center += set.center;
    }
    center /= T::of(sets.len() as f64);
    for set in sets {
        radius = radius.max((set.center - center).norm() + set.radius);
    }
    let merged = GaussianSet::new(gaussians, center, radius);
    rasterize(&merged, view, background)
}
