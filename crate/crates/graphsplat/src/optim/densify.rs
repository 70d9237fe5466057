//! Adaptive density control: pruning, cloning, and splitting driven by
//! accumulated screen-space gradients.

use nalgebra::Vector3;
use rand::Rng;

use crate::num::Real;
use crate::optim::TrainConfig;
use crate::splat::backward::RenderGrads;
use crate::splat::project::quaternion_to_rotation;
use crate::splat::GaussianSet;

/// Scale divisor applied to both children of a split.
pub const SPLIT_SHRINK: f64 = 1.6;
/// Clone offset length as a fraction of the parent's largest scale.
pub const CLONE_OFFSET_FRACTION: f64 = 0.05;
/// Distance (in scene radii) beyond which the allowance starts growing.
pub const NEAR_FIELD_RADII: f64 = 2.0;

/// Scale allowance multiplier: 1 inside the near field, growing linearly
/// with distance past it so background Gaussians may stay coarse. The two
/// branches agree at the boundary.
pub fn gamma<T: Real>(position: &Vector3<T>, center: &Vector3<T>, radius: T, multi_scale: bool) -> T {
    if !multi_scale {
        return T::one();
    }
    let dist = (position - center).norm();
    let near = T::of(NEAR_FIELD_RADII) * radius;
    if dist < near {
        T::one()
    } else {
        dist / radius - T::one()
    }
}

/// Per-Gaussian statistics accumulated between densification rounds.
#[derive(Debug, Clone)]
pub struct DensifyStats<T> {
    pub grad_norm_sum: Vec<T>,
    pub visible_count: Vec<u32>,
    pub d_position_sum: Vec<Vector3<T>>,
}

impl<T: Real> DensifyStats<T> {
    pub fn new(num_gaussians: usize) -> Self {
        DensifyStats {
            grad_norm_sum: vec![T::zero(); num_gaussians],
            visible_count: vec![0; num_gaussians],
            d_position_sum: vec![Vector3::zeros(); num_gaussians],
        }
    }

    pub fn len(&self) -> usize {
        self.visible_count.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visible_count.is_empty()
    }

    pub fn accumulate(&mut self, grads: &RenderGrads<T>) {
        assert_eq!(self.len(), grads.len());
        for i in 0..self.len() {
            if grads.visible[i] {
                self.grad_norm_sum[i] += grads.mean2d_norm[i];
                self.visible_count[i] += 1;
                self.d_position_sum[i] += grads.d_position[i];
            }
        }
    }
}

/// What one densification round did. `parents[j]` names the previous index
/// whose optimizer state Gaussian `j` inherits; `None` marks a newcomer.
#[derive(Debug, Clone)]
pub struct DensifyOutcome {
    pub parents: Vec<Option<usize>>,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// One densification round: prune oversized or transparent Gaussians, then
/// clone small high-gradient survivors and split large ones.
pub fn densify_control<T: Real>(
    set: &mut GaussianSet<T>,
    stats: &DensifyStats<T>,
    cfg: &TrainConfig<T>,
    rng: &mut impl Rng,
) -> DensifyOutcome {
    assert_eq!(set.len(), stats.len());
    let radius = set.radius;
    let center = set.center;
    let mut gaussians = Vec::with_capacity(set.len());
    let mut parents = Vec::with_capacity(set.len());
    let mut cloned = 0;
    let mut split = 0;
    let mut pruned = 0;

    for (i, g) in set.gaussians.iter().enumerate() {
        let allowance = gamma(&g.position, &center, radius, cfg.multi_scale) * radius;
        let max_scale = g.max_scale();
        if max_scale > cfg.prune_scale_fraction * allowance || g.opacity() < cfg.prune_opacity {
            pruned += 1;
            continue;
        }
        let views = stats.visible_count[i];
        let avg_grad = if views == 0 {
            T::zero()
        } else {
            stats.grad_norm_sum[i] / T::of(views as f64)
        };
        if avg_grad <= cfg.grad_threshold {
            gaussians.push(g.clone());
            parents.push(Some(i));
            continue;
        }
        if max_scale < cfg.clone_scale_fraction * allowance {
            // under-reconstructed: duplicate, nudging the copy along the
            // accumulated descent direction
            let mut copy = g.clone();
            let descent = -stats.d_position_sum[i];
            if descent.norm() > T::of(1e-12) {
                copy.position += descent.normalize() * (T::of(CLONE_OFFSET_FRACTION) * max_scale);
            }
            gaussians.push(g.clone());
            parents.push(Some(i));
            gaussians.push(copy);
            parents.push(None);
            cloned += 1;
        } else {
            // over-reconstructed: replace with two shrunken samples drawn
            // inside the parent ellipsoid
            let rotation = quaternion_to_rotation(&g.rotation);
            let scales = g.scales();
            let shrink = T::of(SPLIT_SHRINK).ln();
            for _ in 0..2 {
                let eps = Vector3::new(
                    T::standard_normal(rng),
                    T::standard_normal(rng),
                    T::standard_normal(rng),
                );
                let mut child = g.clone();
                child.position = g.position + rotation * eps.component_mul(&scales);
                child.log_scales = g.log_scales.map(|s| s - shrink);
                gaussians.push(child);
                parents.push(None);
            }
            split += 1;
        }
    }

    set.gaussians = gaussians;
    DensifyOutcome {
        parents,
        cloned,
        split,
        pruned,
    }
}
