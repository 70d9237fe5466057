//! Losses, gradients, densification, and the training loops.

pub mod adam;
pub mod densify;
pub mod gradients;
pub mod loss;
pub mod mv;
pub mod trainer;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::num::Real;
use crate::scene_io::kv;

/// Hyperparameters for one training run. The position learning rate is
/// multiplied by the region radius and decays exponentially to
/// `lr_position_final_scale` of its start over the run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub iterations: usize,
    pub lr_position: T,
    pub lr_position_final_scale: T,
    pub lr_rotation: T,
    pub lr_scales: T,
    pub lr_opacity: T,
    pub lr_color: T,
    /// Weight of the structural term in the photometric loss.
    pub lambda: T,
    pub densify_from: usize,
    pub densify_until: usize,
    pub densify_interval: usize,
    /// Mean screen-space gradient that marks a Gaussian for clone/split.
    pub grad_threshold: T,
    /// Clone when the largest scale is below this fraction of the
    /// scale-adjusted region radius.
    pub clone_scale_fraction: T,
    /// Prune when the largest scale exceeds this fraction of it.
    pub prune_scale_fraction: T,
    pub prune_opacity: T,
    pub multi_view: bool,
    pub multi_scale: bool,
    pub mv_from: usize,
    pub mv_neighbors: usize,
    pub mv_patch: usize,
    pub mv_pixel_samples: usize,
    pub mv_weight: T,
    pub rng_seed: u64,
    pub background: Vector3<T>,
}

impl<T: Real> Default for TrainConfig<T> {
    fn default() -> Self {
        let iterations = 2000;
        TrainConfig {
            iterations,
            lr_position: T::of(1.6e-4),
            lr_position_final_scale: T::of(0.01),
            lr_rotation: T::of(1e-3),
            lr_scales: T::of(5e-3),
            lr_opacity: T::of(5e-2),
            lr_color: T::of(2.5e-3),
            lambda: T::of(0.2),
            densify_from: 500,
            densify_until: 1500,
            densify_interval: 100,
            grad_threshold: T::of(2e-4),
            clone_scale_fraction: T::of(0.01),
            prune_scale_fraction: T::of(0.1),
            prune_opacity: T::of(0.005),
            multi_view: true,
            multi_scale: true,
            mv_from: 500.max(iterations / 8),
            mv_neighbors: 4,
            mv_patch: 7,
            mv_pixel_samples: 1024,
            mv_weight: T::of(0.2),
            rng_seed: 42,
            background: Vector3::zeros(),
        }
    }
}

impl<T: Real> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let arg = |msg: String| Err(Error::Argument(msg));
        if self.iterations == 0 {
            return arg("iterations must be positive".into());
        }
        for (name, v) in [
            ("lr_position", self.lr_position),
            ("lr_rotation", self.lr_rotation),
            ("lr_scales", self.lr_scales),
            ("lr_opacity", self.lr_opacity),
            ("lr_color", self.lr_color),
        ] {
            if v <= T::zero() || !v.is_finite() {
                return arg(format!("{name} must be positive, got {}", v.as_f64()));
            }
        }
        if self.lr_position_final_scale <= T::zero() || self.lr_position_final_scale > T::one() {
            return arg("lr_position_final_scale must be in (0, 1]".into());
        }
        if self.lambda < T::zero() || self.lambda >= T::one() {
            return arg(format!("lambda must be in [0, 1), got {}", self.lambda.as_f64()));
        }
        if self.densify_from >= self.densify_until || self.densify_until > self.iterations {
            return arg(format!(
                "densify window {}..{} must be increasing and end within {} iterations",
                self.densify_from, self.densify_until, self.iterations
            ));
        }
        if self.densify_interval == 0 {
            return arg("densify_interval must be positive".into());
        }
        if self.grad_threshold <= T::zero() {
            return arg("grad_threshold must be positive".into());
        }
        if self.clone_scale_fraction <= T::zero()
            || self.clone_scale_fraction >= self.prune_scale_fraction
        {
            return arg(format!(
                "clone fraction {} must sit strictly below prune fraction {}",
                self.clone_scale_fraction.as_f64(),
                self.prune_scale_fraction.as_f64()
            ));
        }
        if self.prune_opacity <= T::zero() || self.prune_opacity >= T::one() {
            return arg("prune_opacity must be in (0, 1)".into());
        }
        if self.mv_patch < 3 || self.mv_patch % 2 == 0 {
            return arg(format!("mv_patch must be odd and at least 3, got {}", self.mv_patch));
        }
        if self.mv_neighbors == 0 || self.mv_pixel_samples == 0 {
            return arg("mv_neighbors and mv_pixel_samples must be positive".into());
        }
        if self.mv_weight < T::zero() {
            return arg("mv_weight must be non-negative".into());
        }
        for (i, c) in self.background.iter().enumerate() {
            if *c < T::zero() || *c > T::one() {
                return arg(format!("background channel {i} must be in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Canonical `key=value` form: sorted keys, full precision. Parsing it
    /// back reproduces the config exactly.
    pub fn to_kv(&self) -> String {
        let pairs = vec![
            ("background".to_string(), format!(
                "{},{},{}",
                self.background.x.as_f64(),
                self.background.y.as_f64(),
                self.background.z.as_f64()
            )),
            ("clone_scale_fraction".into(), self.clone_scale_fraction.as_f64().to_string()),
            ("densify_from".into(), self.densify_from.to_string()),
            ("densify_interval".into(), self.densify_interval.to_string()),
            ("densify_until".into(), self.densify_until.to_string()),
            ("grad_threshold".into(), self.grad_threshold.as_f64().to_string()),
            ("iterations".into(), self.iterations.to_string()),
            ("lambda".into(), self.lambda.as_f64().to_string()),
            ("lr_color".into(), self.lr_color.as_f64().to_string()),
            ("lr_opacity".into(), self.lr_opacity.as_f64().to_string()),
            ("lr_position".into(), self.lr_position.as_f64().to_string()),
            ("lr_position_final_scale".into(), self.lr_position_final_scale.as_f64().to_string()),
            ("lr_rotation".into(), self.lr_rotation.as_f64().to_string()),
            ("lr_scales".into(), self.lr_scales.as_f64().to_string()),
            ("multi_scale".into(), self.multi_scale.to_string()),
            ("multi_view".into(), self.multi_view.to_string()),
            ("mv_from".into(), self.mv_from.to_string()),
            ("mv_neighbors".into(), self.mv_neighbors.to_string()),
            ("mv_patch".into(), self.mv_patch.to_string()),
            ("mv_pixel_samples".into(), self.mv_pixel_samples.to_string()),
            ("mv_weight".into(), self.mv_weight.as_f64().to_string()),
            ("prune_opacity".into(), self.prune_opacity.as_f64().to_string()),
            ("prune_scale_fraction".into(), self.prune_scale_fraction.as_f64().to_string()),
            ("rng_seed".into(), self.rng_seed.to_string()),
        ];
        kv::format(&pairs)
    }

    /// Applies `key=value` overrides from `text` on top of `self`. Unknown
    /// keys and malformed values are argument errors tagged with the line.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (line, key, value) in kv::parse(text)? {
            let bad = |what: &str| {
                Error::Argument(format!("line {line}: {what} '{value}' for key {key}"))
            };
            match key.as_str() {
                "iterations" => self.iterations = value.parse().map_err(|_| bad("bad count"))?,
                "lr_position" => self.lr_position = parse_real(&value).ok_or_else(|| bad("bad number"))?,
                "lr_position_final_scale" => {
                    self.lr_position_final_scale = parse_real(&value).ok_or_else(|| bad("bad number"))?
                }
                "lr_rotation" => self.lr_rotation = parse_real(&value).ok_or_else(|| bad("bad number"))?,
                "lr_scales" => self.lr_scales = parse_real(&value).ok_or_else(|| bad("bad number"))?,
                "lr_opacity" => self.lr_opacity = parse_real(&value).ok_or_else(|| bad("bad number"))?,
                "lr_color" => self.lr_color = parse_real(&value).ok_or_else(|| bad("bad number"))?,
                "lambda" => self.lambda = parse_real(&value).ok_or_else(|| bad("bad number"))?,
                "densify_from" => self.densify_from = value.parse().map_err(|_| bad("bad count"))?,
                "densify_until" => self.densify_until = value.parse().map_err(|_| bad("bad count"))?,
                "densify_interval" => {
                    self.densify_interval = value.parse().map_err(|_| bad("bad count"))?
                }
                "grad_threshold" => {
                    self.grad_threshold = parse_real(&value).ok_or_else(|| bad("bad number"))?
                }
                "clone_scale_fraction" => {
                    self.clone_scale_fraction = parse_real(&value).ok_or_else(|| bad("bad number"))?
                }
                "prune_scale_fraction" => {
                    self.prune_scale_fraction = parse_real(&value).ok_or_else(|| bad("bad number"))?
                }
                "prune_opacity" => {
                    self.prune_opacity = parse_real(&value).ok_or_else(|| bad("bad number"))?
                }
                "multi_view" => self.multi_view = value.parse().map_err(|_| bad("bad bool"))?,
                "multi_scale" => self.multi_scale = value.parse().map_err(|_| bad("bad bool"))?,
                "mv_from" => self.mv_from = value.parse().map_err(|_| bad("bad count"))?,
                "mv_neighbors" => self.mv_neighbors = value.parse().map_err(|_| bad("bad count"))?,
                "mv_patch" => self.mv_patch = value.parse().map_err(|_| bad("bad count"))?,
                "mv_pixel_samples" => {
                    self.mv_pixel_samples = value.parse().map_err(|_| bad("bad count"))?
                }
                "mv_weight" => self.mv_weight = parse_real(&value).ok_or_else(|| bad("bad number"))?,
                "rng_seed" => self.rng_seed = value.parse().map_err(|_| bad("bad seed"))?,
                "background" => {
                    let parts: Vec<&str> = value.split(',').collect();
                    if parts.len() != 3 {
                        return Err(bad("expected r,g,b"));
                    }
                    let mut bg = Vector3::zeros();
                    for (i, p) in parts.iter().enumerate() {
                        bg[i] = parse_real(p.trim()).ok_or_else(|| bad("bad number"))?;
                    }
                    self.background = bg;
                }
                _ => {
                    return Err(Error::Argument(format!(
                        "line {line}: unknown training option '{key}'"
                    )))
                }
            }
        }
        Ok(())
    }
}

fn parse_real<T: Real>(s: &str) -> Option<T> {
    s.parse::<f64>().ok().filter(|v| v.is_finite()).map(T::of)
}
