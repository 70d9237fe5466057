//! Adam over the five Gaussian parameter groups.

use crate::num::Real;
use crate::splat::backward::RenderGrads;
use crate::splat::GaussianSet;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Per-iteration step sizes. The position rate is expected to already
/// include the region-radius scaling and decay.
#[derive(Debug, Clone, Copy)]
pub struct StepSizes<T> {
    pub position: T,
    pub rotation: T,
    pub log_scales: T,
    pub opacity: T,
    pub color: T,
}

#[derive(Debug, Clone)]
struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> Moments<T> {
    fn new(len: usize) -> Self {
        Moments {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }

    fn update(&mut self, idx: usize, grad: T, lr: T, c1: T, c2: T) -> T {
        let b1 = T::of(BETA1);
        let b2 = T::of(BETA2);
        self.m[idx] = b1 * self.m[idx] + (T::one() - b1) * grad;
        self.v[idx] = b2 * self.v[idx] + (T::one() - b2) * grad * grad;
        let m_hat = self.m[idx] / c1;
        let v_hat = self.v[idx] / c2;
        -lr * m_hat / (v_hat.sqrt() + T::of(ADAM_EPS))
    }

    /// Rebuilds the moment arrays for a densified set: entry `j` copies the
    /// moments of `parents[j]` when present and starts at zero otherwise.
    fn remap(&mut self, parents: &[Option<usize>], stride: usize) {
        let mut m = vec![T::zero(); parents.len() * stride];
        let mut v = vec![T::zero(); parents.len() * stride];
        for (j, parent) in parents.iter().enumerate() {
            if let Some(i) = parent {
                for d in 0..stride {
                    m[j * stride + d] = self.m[i * stride + d];
                    v[j * stride + d] = self.v[i * stride + d];
                }
            }
        }
        self.m = m;
        self.v = v;
    }
}

/// Adam state for every parameter of a Gaussian set.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    position: Moments<T>,
    rotation: Moments<T>,
    log_scales: Moments<T>,
    opacity: Moments<T>,
    color: Moments<T>,
    step_count: u32,
}

impl<T: Real> Optimizer<T> {
    pub fn new(num_gaussians: usize) -> Self {
        Optimizer {
            position: Moments::new(num_gaussians * 3),
            rotation: Moments::new(num_gaussians * 4),
            log_scales: Moments::new(num_gaussians * 3),
            opacity: Moments::new(num_gaussians),
            color: Moments::new(num_gaussians * 3),
            step_count: 0,
        }
    }

    /// One Adam step over all parameters. Rotations are renormalized
    /// afterwards so stored quaternions stay close to unit length.
    pub fn step(&mut self, set: &mut GaussianSet<T>, grads: &RenderGrads<T>, lr: &StepSizes<T>) {
        assert_eq!(set.len(), grads.len());
        self.step_count += 1;
        let c1 = T::one() - T::of(BETA1).powi(self.step_count as i32);
        let c2 = T::one() - T::of(BETA2).powi(self.step_count as i32);
        for (i, g) in set.gaussians.iter_mut().enumerate() {
            for d in 0..3 {
                g.position[d] +=
                    self.position
                        .update(i * 3 + d, grads.d_position[i][d], lr.position, c1, c2);
                g.log_scales[d] += self.log_scales.update(
                    i * 3 + d,
                    grads.d_log_scales[i][d],
                    lr.log_scales,
                    c1,
                    c2,
                );
                g.color[d] +=
                    self.color
                        .update(i * 3 + d, grads.d_color[i][d], lr.color, c1, c2);
            }
            for d in 0..4 {
                g.rotation[d] += self.rotation.update(
                    i * 4 + d,
                    grads.d_rotation[i][d],
                    lr.rotation,
                    c1,
                    c2,
                );
            }
            g.opacity_logit +=
                self.opacity
                    .update(i, grads.d_opacity_logit[i], lr.opacity, c1, c2);

            let norm = g.rotation.norm();
            if norm > T::of(1e-12) {
                g.rotation /= norm;
            } else {
                g.rotation = nalgebra::Vector4::new(T::one(), T::zero(), T::zero(), T::zero());
            }
        }
    }

    /// Carries moments across a densification: kept Gaussians keep their
    /// state, fresh ones start cold.
    pub fn remap(&mut self, parents: &[Option<usize>]) {
        self.position.remap(parents, 3);
        self.rotation.remap(parents, 4);
        self.log_scales.remap(parents, 3);
        self.opacity.remap(parents, 1);
        self.color.remap(parents, 3);
    }

    pub fn len(&self) -> usize {
        self.opacity.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity.m.is_empty()
    }
}

/// Convenience for tests and simple loops: zero-initialized gradients.
pub fn zero_grads<T: Real>(n: usize) -> RenderGrads<T> {
    RenderGrads::zeros(n)
}
