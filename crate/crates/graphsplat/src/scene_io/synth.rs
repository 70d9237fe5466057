//! Synthetic scenes with exact ground truth.
//!
//! A generated scene carries the ground-truth Gaussian set, a camera
//! trajectory, rendered images for every view, and a sparse proxy model
//! (one point per Gaussian, observed by the views that actually see it
//! through occlusion). Everything is driven by one seed, so scenes are
//! reproducible byte for byte.

use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3, Vector4};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::num::Real;
use crate::splat::project::build_covariance;
use crate::splat::raster::Rasterization;
use crate::splat::{logit, Gaussian, GaussianSet, Z_NEAR};

use super::image::Image;
use super::{CameraView, ImageRef, SparseModel, SparsePoint};

/// Camera path layout for generated scenes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    /// Ring of cameras around the content, all looking at its center.
    Orbit,
    /// Forward-facing cameras advancing along a corridor of content.
    Street,
    /// Downward-facing cameras on a lattice above the content.
    Grid,
}

impl FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orbit" => Ok(TrajectoryKind::Orbit),
            "street" => Ok(TrajectoryKind::Street),
            "grid" => Ok(TrajectoryKind::Grid),
            other => Err(Error::Argument(format!(
                "unknown trajectory '{other}', expected orbit, street, or grid"
            ))),
        }
    }
}

impl TrajectoryKind {
    pub fn name(&self) -> &'static str {
        match self {
            TrajectoryKind::Orbit => "orbit",
            TrajectoryKind::Street => "street",
            TrajectoryKind::Grid => "grid",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub num_gaussians: usize,
    pub num_views: usize,
    pub image_size: u32,
    pub trajectory: TrajectoryKind,
    pub rng_seed: u64,
    /// Fraction of Gaussians placed roughly ten anchor radii out, past the
    /// main content.
    pub far_cluster_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_gaussians: 120,
            num_views: 12,
            image_size: 64,
            trajectory: TrajectoryKind::Orbit,
            rng_seed: 7,
            far_cluster_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene<T: Real> {
    pub ground_truth: GaussianSet<T>,
    pub model: SparseModel<T>,
    pub images: Vec<Arc<Image<T>>>,
}

/// World-to-camera pose looking from `eye` toward `target`. Rows of the
/// rotation are the camera's right, down, and forward axes in world space;
/// the translation is `-R·eye`.
pub fn look_at<T: Real>(
    eye: &Vector3<T>,
    target: &Vector3<T>,
    up: &Vector3<T>,
) -> (Matrix3<T>, Vector3<T>) {
    let forward = (target - eye).normalize();
    let right = forward.cross(up).normalize();
    let down = forward.cross(&right);
    let rotation = Matrix3::from_rows(&[
        right.transpose(),
        down.transpose(),
        forward.transpose(),
    ]);
    let translation = -(rotation * eye);
    (rotation, translation)
}

pub fn random_unit_quaternion<T: Real, R: Rng + ?Sized>(rng: &mut R) -> Vector4<T> {
    loop {
        let q = Vector4::new(
            T::standard_normal(rng),
            T::standard_normal(rng),
            T::standard_normal(rng),
            T::standard_normal(rng),
        );
        let n = q.norm();
        if n > T::of(1e-3) {
            return q / n;
        }
    }
}

struct CameraSpec<T> {
    eye: Vector3<T>,
    target: Vector3<T>,
    up: Vector3<T>,
}

/// A Gaussian's compositing weight must reach this at the projected center
/// of a proxy point for the view to count as observing it.
const OBSERVER_WEIGHT: f64 = 0.02;
const INSIDE_ONE_SIGMA_ATTEMPTS: usize = 100;

pub fn generate_synthetic_scene<T: Real>(cfg: &SynthConfig) -> Result<SynthScene<T>> {
    if cfg.num_views < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 views, got {}",
            cfg.num_views
        )));
    }
    if cfg.num_gaussians == 0 {
        return Err(Error::Argument("need at least 1 gaussian".into()));
    }
    if cfg.image_size < 16 {
        return Err(Error::Argument(format!(
            "image size must be at least 16, got {}",
            cfg.image_size
        )));
    }
    if !(0.0..1.0).contains(&cfg.far_cluster_fraction) {
        return Err(Error::Argument(format!(
            "far cluster fraction must be in [0, 1), got {}",
            cfg.far_cluster_fraction
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let specs: Vec<CameraSpec<T>> = camera_specs(cfg);
    let centers: Vec<Vector3<T>> = specs.iter().map(|s| s.eye).collect();
    let (anchor_center, anchor_radius) = GaussianSet::anchor_from_cameras(&centers);

    let gaussians = sample_gaussians(cfg, &mut rng, anchor_center, anchor_radius);
    // precompute covariance inverses for the camera-clearance check
    let inv_covs: Vec<Matrix3<T>> = gaussians
        .iter()
        .map(|g| {
            build_covariance(&g.rotation, &g.log_scales)
                .try_inverse()
                .expect("positive-definite covariance")
        })
        .collect();

    let mut views: Vec<CameraView<T>> = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let mut eye = spec.eye;
        let mut placed = None;
        for _ in 0..INSIDE_ONE_SIGMA_ATTEMPTS {
            if clear_of_all(&eye, &gaussians, &inv_covs) {
                placed = Some(eye);
                break;
            }
            let scale = T::of(0.05) * anchor_radius;
            eye += Vector3::new(
                T::standard_normal(&mut rng) * scale,
                T::standard_normal(&mut rng) * scale,
                T::standard_normal(&mut rng) * scale,
            );
        }
        let Some(eye) = placed else {
            return Err(Error::Degenerate(format!(
                "camera {i} could not be placed outside all 1-sigma ellipsoids"
            )));
        };
        let (rotation, translation) = look_at(&eye, &spec.target, &spec.up);
        let size = cfg.image_size;
        views.push(CameraView {
            id: i as u32,
            fx: T::of(size as f64 / 2.0),
            fy: T::of(size as f64 / 2.0),
            cx: T::of(size as f64 / 2.0),
            cy: T::of(size as f64 / 2.0),
            rotation,
            translation,
            width: size,
            height: size,
            image_ref: None,
        });
    }

    // scene anchor from the final camera placement
    let final_centers: Vec<Vector3<T>> = views.iter().map(|v| v.camera_center()).collect();
    let (center, radius) = GaussianSet::anchor_from_cameras(&final_centers);
    let ground_truth = GaussianSet::new(gaussians, center, radius);
    ground_truth.validate()?;

    let mut images = Vec::with_capacity(views.len());
    let mut observers: Vec<Vec<u32>> = vec![Vec::new(); ground_truth.len()];
    let black = Vector3::zeros();
    for view in &mut views {
        let raster = Rasterization::prepare(&ground_truth, view, black)?;
        for (pi, g) in ground_truth.gaussians.iter().enumerate() {
            if let Some((x, y)) = projected_pixel(view, &g.position) {
                let mut weight = T::zero();
                raster.walk_pixel(x, y, |k, alpha, _falloff, _clamped, trans| {
                    if raster.splat_source(k) == pi {
                        weight += alpha * trans;
                    }
                });
                if weight >= T::of(OBSERVER_WEIGHT) {
                    observers[pi].push(view.id);
                }
            }
        }
        let image = Arc::new(raster.into_buffers().color);
        view.image_ref = Some(ImageRef::Data(image.clone()));
        images.push(image);
    }

    let points = ground_truth
        .gaussians
        .iter()
        .zip(observers)
        .map(|(g, obs)| SparsePoint {
            position: g.position,
            color: g.color,
            observers: obs,
        })
        .collect();

    let model = SparseModel {
        views,
        points,
        match_edges: Vec::new(),
    };
    model.validate()?;
    Ok(SynthScene {
        ground_truth,
        model,
        images,
    })
}

fn clear_of_all<T: Real>(
    eye: &Vector3<T>,
    gaussians: &[Gaussian<T>],
    inv_covs: &[Matrix3<T>],
) -> bool {
    gaussians.iter().zip(inv_covs).all(|(g, inv)| {
        let d = eye - g.position;
        d.dot(&(inv * d)) >= T::one()
    })
}

fn projected_pixel<T: Real>(view: &CameraView<T>, p: &Vector3<T>) -> Option<(u32, u32)> {
    let cam = view.world_to_camera(p);
    if cam.z <= T::of(Z_NEAR) {
        return None;
    }
    let px = view.project_camera_point(&cam);
    let x = px.x.as_f64().floor();
    let y = px.y.as_f64().floor();
    if x < 0.0 || y < 0.0 || x >= view.width as f64 || y >= view.height as f64 {
        return None;
    }
    Some((x as u32, y as u32))
}

fn camera_specs<T: Real>(cfg: &SynthConfig) -> Vec<CameraSpec<T>> {
    let n = cfg.num_views;
    match cfg.trajectory {
        TrajectoryKind::Orbit => (0..n)
            .map(|i| {
                let theta = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                CameraSpec {
                    eye: Vector3::new(
                        T::of(6.0 * theta.cos()),
                        T::of(6.0 * theta.sin()),
                        T::of(1.5),
                    ),
                    target: Vector3::zeros(),
                    up: Vector3::new(T::zero(), T::zero(), T::one()),
                }
            })
            .collect(),
        TrajectoryKind::Street => (0..n)
            .map(|i| {
                let x = 0.8 * i as f64;
                CameraSpec {
                    eye: Vector3::new(T::of(x), T::zero(), T::of(1.6)),
                    target: Vector3::new(T::of(x + 4.0), T::zero(), T::of(1.4)),
                    up: Vector3::new(T::zero(), T::zero(), T::one()),
                }
            })
            .collect(),
        TrajectoryKind::Grid => {
            let side = (n as f64).sqrt().ceil() as usize;
            (0..n)
                .map(|i| {
                    let gx = (i % side) as f64 - (side as f64 - 1.0) / 2.0;
                    let gy = (i / side) as f64 - (side as f64 - 1.0) / 2.0;
                    CameraSpec {
                        eye: Vector3::new(T::of(2.0 * gx), T::of(2.0 * gy), T::of(8.0)),
                        target: Vector3::new(T::of(2.0 * gx), T::of(2.0 * gy + 0.01), T::zero()),
                        up: Vector3::new(T::zero(), T::one(), T::zero()),
                    }
                })
                .collect()
        }
    }
}

fn sample_gaussians<T: Real>(
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
    anchor_center: Vector3<T>,
    anchor_radius: T,
) -> Vec<Gaussian<T>> {
    let n = cfg.num_gaussians;
    let n_far = (cfg.far_cluster_fraction * n as f64).round() as usize;
    let n_near = n - n_far;
    let mut out = Vec::with_capacity(n);

    let base_scale = match cfg.trajectory {
        TrajectoryKind::Orbit => 0.18,
        TrajectoryKind::Street => 0.25,
        TrajectoryKind::Grid => 0.22,
    };
    let sample_near = |rng: &mut ChaCha8Rng| -> Vector3<T> {
        match cfg.trajectory {
            TrajectoryKind::Orbit => loop {
                let p = Vector3::new(
                    T::unit_uniform(rng) * T::of(4.0) - T::of(2.0),
                    T::unit_uniform(rng) * T::of(4.0) - T::of(2.0),
                    T::unit_uniform(rng) * T::of(4.0) - T::of(2.0),
                );
                if p.norm() <= T::of(2.0) {
                    break p;
                }
            },
            TrajectoryKind::Street => {
                let len = 0.8 * cfg.num_views as f64 + 9.0;
                let side = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                Vector3::new(
                    T::of(1.0) + T::unit_uniform(rng) * T::of(len),
                    T::of(side) * (T::of(1.4) + T::unit_uniform(rng) * T::of(1.2)),
                    T::unit_uniform(rng) * T::of(2.8) + T::of(0.2),
                )
            }
            TrajectoryKind::Grid => {
                let side = (cfg.num_views as f64).sqrt().ceil();
                let extent = side + 1.0;
                Vector3::new(
                    (T::unit_uniform(rng) * T::of(2.0) - T::one()) * T::of(extent),
                    (T::unit_uniform(rng) * T::of(2.0) - T::one()) * T::of(extent),
                    T::unit_uniform(rng) * T::of(2.0) - T::of(0.5),
                )
            }
        }
    };
    let far_direction: Vector3<T> = match cfg.trajectory {
        TrajectoryKind::Orbit => Vector3::new(T::of(0.6), T::of(0.64), T::of(0.48)),
        TrajectoryKind::Street => Vector3::new(T::one(), T::zero(), T::of(0.05)).normalize(),
        TrajectoryKind::Grid => Vector3::new(T::of(0.1), T::of(0.1), T::of(-0.99)).normalize(),
    };

    for i in 0..n {
        let far = i >= n_near;
        let position = if far {
            let ten_r = T::of(10.0) * anchor_radius;
            let spread = T::of(0.08) * anchor_radius;
            anchor_center
                + far_direction * ten_r
                + Vector3::new(
                    T::standard_normal(rng) * spread,
                    T::standard_normal(rng) * spread,
                    T::standard_normal(rng) * spread,
                )
        } else {
            sample_near(rng)
        };
        let scale_base = if far {
            0.25 * anchor_radius.as_f64()
        } else {
            base_scale
        };
        let log_scales = Vector3::new(
            T::of((scale_base * lerp(rng, 0.6, 1.5)).ln()),
            T::of((scale_base * lerp(rng, 0.6, 1.5)).ln()),
            T::of((scale_base * lerp(rng, 0.6, 1.5)).ln()),
        );
        let color = Vector3::new(
            T::of(lerp(rng, 0.05, 0.95)),
            T::of(lerp(rng, 0.05, 0.95)),
            T::of(lerp(rng, 0.05, 0.95)),
        );
        out.push(Gaussian {
            position,
            rotation: random_unit_quaternion(rng),
            log_scales,
            opacity_logit: logit(T::of(lerp(rng, 0.55, 0.95))),
            color,
        });
    }
    out
}

fn lerp(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}
