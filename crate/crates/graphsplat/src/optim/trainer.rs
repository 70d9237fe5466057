//! Region-level training loops: initialization from sparse points,
//! view scheduling, densification rounds, and the coarse global pass.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::num::Real;
use crate::optim::adam::{Optimizer, StepSizes};
use crate::optim::densify::{densify_control, DensifyStats};
use crate::optim::gradients::{compute_gradients, compute_gradients_with_mv, IterationStats};
use crate::optim::TrainConfig;
use crate::scene_io::image::GrayImage;
use crate::scene_io::{CameraView, Image, ImageRef, SparseModel, SparsePoint};
use crate::splat::{logit, Gaussian, GaussianSet};
use crate::traj_graph::ConnectivityGraph;

/// Every `TEST_HOLDOUT_STRIDE`-th camera (by ascending id) is held out of
/// training and reserved for evaluation.
pub const TEST_HOLDOUT_STRIDE: usize = 8;
/// Initial opacity given to every point-seeded Gaussian.
pub const INIT_OPACITY: f64 = 0.1;
/// Coarse-pass reduction applied to image resolution, point count, and
/// iteration count.
pub const COARSE_FACTOR: u32 = 4;

/// A finished training run: the optimized set plus per-iteration losses.
#[derive(Debug, Clone)]
pub struct TrainedRegion<T> {
    pub set: GaussianSet<T>,
    pub history: Vec<(u32, IterationStats<T>)>,
}

/// Splits sorted camera ids into (train, test): every eighth id starting
/// from the first is held out.
pub fn split_train_test(ids: &[u32]) -> (Vec<u32>, Vec<u32>) {
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, id) in sorted.into_iter().enumerate() {
        if i % TEST_HOLDOUT_STRIDE == 0 {
            test.push(id);
        } else {
            train.push(id);
        }
    }
    (train, test)
}

struct TrainView<T> {
    view: CameraView<T>,
    image: Image<T>,
    gray: GrayImage<T>,
}

fn resolve_views<T: Real>(model: &SparseModel<T>, ids: &[u32]) -> Result<Vec<TrainView<T>>> {
    ids.iter()
        .map(|&id| {
            let view = model
                .view(id)
                .ok_or_else(|| Error::Integrity(format!("camera {id} is not in the model")))?;
            let image = view.load_image()?;
            let gray = image.to_gray();
            Ok(TrainView {
                view: view.clone(),
                image,
                gray,
            })
        })
        .collect()
}

/// Seeds one Gaussian per sparse point: isotropic scale from the mean
/// distance to the nearest neighbors, color from the point, low opacity.
pub fn init_from_points<T: Real>(
    points: &[&SparsePoint<T>],
    center: Vector3<T>,
    radius: T,
    cfg: &TrainConfig<T>,
) -> Result<GaussianSet<T>> {
    if points.is_empty() {
        return Err(Error::Argument(
            "cannot initialize from an empty point set".into(),
        ));
    }
    let floor = T::of(1e-4) * radius;
    let cap = T::of(0.5) * cfg.prune_scale_fraction * radius;
    let neighbors = 3.min(points.len() - 1);
    let gaussians = points
        .iter()
        .map(|p| {
            let iso = if neighbors == 0 {
                T::of(0.05) * radius
            } else {
                let mut dists: Vec<T> = points
                    .iter()
                    .map(|q| (q.position - p.position).norm())
                    .collect();
                dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
                // dists[0] is the point itself
                let mut sum = T::zero();
                for &d in &dists[1..=neighbors] {
                    sum += d;
                }
                sum / T::of(neighbors as f64)
            };
            let iso = iso.max(floor).min(cap);
            let mut g = Gaussian::at(p.position);
            g.log_scales = Vector3::from_element(iso.ln());
            g.opacity_logit = logit(T::of(INIT_OPACITY));
            g.color = p.color.map(|c| c.max(T::zero()).min(T::one()));
            g
        })
        .collect();
    let set = GaussianSet::new(gaussians, center, radius);
    set.validate()?;
    Ok(set)
}

fn learning_rates<T: Real>(cfg: &TrainConfig<T>, radius: T, t: usize) -> StepSizes<T> {
    let progress = T::of(t as f64 / cfg.iterations.max(1) as f64);
    let decay = cfg.lr_position_final_scale.powf(progress);
    StepSizes {
        position: cfg.lr_position * radius * decay,
        rotation: cfg.lr_rotation,
        log_scales: cfg.lr_scales,
        opacity: cfg.lr_opacity,
        color: cfg.lr_color,
    }
}

fn densify_due<T: Real>(cfg: &TrainConfig<T>, t: usize) -> bool {
    let step = t + 1;
    step >= cfg.densify_from
        && step <= cfg.densify_until
        && cfg.densify_interval > 0
        && (step - cfg.densify_from) % cfg.densify_interval == 0
}

fn train_loop<T: Real>(
    mut set: GaussianSet<T>,
    views: &[TrainView<T>],
    neighbors: &[Vec<usize>],
    cfg: &TrainConfig<T>,
    allow_densify: bool,
    allow_mv: bool,
) -> Result<TrainedRegion<T>> {
    assert_eq!(views.len(), neighbors.len());
    let mut optimizer = Optimizer::new(set.len());
    let mut stats_acc = DensifyStats::new(set.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut order: Vec<usize> = (0..views.len()).collect();
    let mut cursor = order.len();
    let mut history = Vec::with_capacity(cfg.iterations);

    for t in 0..cfg.iterations {
        if cursor >= order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let vi = order[cursor];
        cursor += 1;
        let tv = &views[vi];

        let mv_now = allow_mv && cfg.multi_view && t >= cfg.mv_from && !neighbors[vi].is_empty();
        let (grads, stats) = if mv_now {
            let nb: Vec<(&CameraView<T>, &GrayImage<T>)> = neighbors[vi]
                .iter()
                .map(|&j| (&views[j].view, &views[j].gray))
                .collect();
            compute_gradients_with_mv(&set, &tv.view, &tv.image, cfg, &nb, &mut rng)?
        } else {
            compute_gradients(&set, &tv.view, &tv.image, cfg)?
        };
        stats_acc.accumulate(&grads);
        let lr = learning_rates(cfg, set.radius, t);
        optimizer.step(&mut set, &grads, &lr);
        history.push((t as u32, stats));

        if allow_densify && densify_due(cfg, t) {
            let outcome = densify_control(&mut set, &stats_acc, cfg, &mut rng);
            if set.is_empty() {
                return Err(Error::Degenerate(
                    "densification pruned every gaussian".into(),
                ));
            }
            optimizer.remap(&outcome.parents);
            stats_acc = DensifyStats::new(set.len());
        }
    }
    Ok(TrainedRegion { set, history })
}

/// Trains one region: cameras are split train/test, Gaussians are seeded
/// from the region's sparse points, and neighbor views for the cross-view
/// term come from the connectivity graph restricted to the train split.
pub fn train_region<T: Real>(
    model: &SparseModel<T>,
    graph: &ConnectivityGraph,
    region_views: &[u32],
    region_points: &[usize],
    cfg: &TrainConfig<T>,
) -> Result<TrainedRegion<T>> {
    cfg.validate()?;
    if region_views.len() < 2 {
        return Err(Error::Argument(format!(
            "a region needs at least 2 cameras, got {}",
            region_views.len()
        )));
    }
    let (train_ids, _) = split_train_test(region_views);
    let views = resolve_views(model, &train_ids)?;

    let all_centers: Vec<Vector3<T>> = region_views
        .iter()
        .map(|&id| {
            model
                .view(id)
                .map(|v| v.camera_center())
                .ok_or_else(|| Error::Integrity(format!("camera {id} is not in the model")))
        })
        .collect::<Result<_>>()?;
    let (center, radius) = GaussianSet::<T>::anchor_from_cameras(&all_centers);

    let points: Vec<&SparsePoint<T>> = region_points
        .iter()
        .map(|&i| {
            model.points.get(i).ok_or_else(|| {
                Error::Integrity(format!("point index {i} is out of range"))
            })
        })
        .collect::<Result<_>>()?;
    let set = init_from_points(&points, center, radius, cfg)?;

    let slot_of: BTreeMap<u32, usize> = train_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i))
        .collect();
    let neighbors: Vec<Vec<usize>> = train_ids
        .iter()
        .map(|&id| {
            let ranked = graph.top_neighbors(id, graph.len())?;
            Ok(ranked
                .into_iter()
                .filter_map(|(nid, _)| slot_of.get(&nid).copied())
                .take(cfg.mv_neighbors)
                .collect())
        })
        .collect::<Result<_>>()?;

    train_loop(set, &views, &neighbors, cfg, true, true)
}

/// Quarter-resolution, quarter-iteration training over all cameras at
/// once, used as the reference model when ranking regions. Densification
/// and the cross-view term stay off.
pub fn train_global_coarse<T: Real>(
    model: &SparseModel<T>,
    cfg: &TrainConfig<T>,
) -> Result<TrainedRegion<T>> {
    cfg.validate()?;
    if model.views.len() < 2 {
        return Err(Error::Argument(format!(
            "coarse training needs at least 2 cameras, got {}",
            model.views.len()
        )));
    }
    let mut coarse_cfg = cfg.clone();
    coarse_cfg.iterations = (cfg.iterations / COARSE_FACTOR as usize).max(1);
    coarse_cfg.multi_view = false;

    // never downsample below the minimum view size
    let min_dim = model
        .views
        .iter()
        .map(|v| v.width.min(v.height))
        .min()
        .unwrap_or(0);
    let mut factor = COARSE_FACTOR;
    while factor > 1 && min_dim / factor < crate::scene_io::MIN_VIEW_SIZE {
        factor /= 2;
    }

    let views: Vec<TrainView<T>> = model
        .views
        .iter()
        .map(|v| {
            let image = v.load_image()?.downsample(factor);
            let f = T::of(factor as f64);
            let half = T::of(0.5);
            let view = CameraView {
                id: v.id,
                fx: v.fx / f,
                fy: v.fy / f,
                cx: (v.cx + half) / f - half,
                cy: (v.cy + half) / f - half,
                rotation: v.rotation,
                translation: v.translation,
                width: image.width(),
                height: image.height(),
                image_ref: Some(ImageRef::Data(std::sync::Arc::new(image.clone()))),
            };
            let gray = image.to_gray();
            Ok(TrainView { view, image, gray })
        })
        .collect::<Result<_>>()?;

    let centers: Vec<Vector3<T>> = views.iter().map(|tv| tv.view.camera_center()).collect();
    let (center, radius) = GaussianSet::<T>::anchor_from_cameras(&centers);

    let target = (model.points.len() / COARSE_FACTOR as usize).max(1);
    let points = voxel_downsample(&model.points, target);
    let refs: Vec<&SparsePoint<T>> = points.iter().collect();
    let set = init_from_points(&refs, center, radius, &coarse_cfg)?;

    let neighbors = vec![Vec::new(); views.len()];
    train_loop(set, &views, &neighbors, &coarse_cfg, false, false)
}

/// Reduces a point cloud to at most `target` representatives by averaging
/// within voxels; the voxel size is found by bisection.
pub fn voxel_downsample<T: Real>(points: &[SparsePoint<T>], target: usize) -> Vec<SparsePoint<T>> {
    if target == 0 || points.len() <= target {
        return points.to_vec();
    }
    let mut lo = Vector3::from_element(T::of(f64::INFINITY));
    let mut hi = Vector3::from_element(T::of(f64::NEG_INFINITY));
    for p in points {
        for d in 0..3 {
            lo[d] = lo[d].min(p.position[d]);
            hi[d] = hi[d].max(p.position[d]);
        }
    }
    let extent = (hi - lo).norm().max(T::of(1e-9));

    let key = |p: &Vector3<T>, size: T| -> (i64, i64, i64) {
        let cell = |v: T, origin: T| ((v - origin) / size).floor().as_f64() as i64;
        (
            cell(p.x, lo.x),
            cell(p.y, lo.y),
            cell(p.z, lo.z),
        )
    };
    let occupied = |size: T| -> usize {
        let mut cells = std::collections::BTreeSet::new();
        for p in points {
            cells.insert(key(&p.position, size));
        }
        cells.len()
    };

    let mut small = extent / T::of(1e4);
    let mut large = extent;
    for _ in 0..48 {
        let mid = (small + large) / T::of(2.0);
        if occupied(mid) > target {
            small = mid;
        } else {
            large = mid;
        }
    }
    let size = large;

    let mut cells: BTreeMap<(i64, i64, i64), (Vector3<T>, Vector3<T>, Vec<u32>, usize)> =
        BTreeMap::new();
    for p in points {
        let entry = cells
            .entry(key(&p.position, size))
            .or_insert((Vector3::zeros(), Vector3::zeros(), Vec::new(), 0));
        entry.0 += p.position;
        entry.1 += p.color;
        entry.2.extend_from_slice(&p.observers);
        entry.3 += 1;
    }
    cells
        .into_values()
        .map(|(pos, color, mut observers, count)| {
            observers.sort_unstable();
            observers.dedup();
            let n = T::of(count as f64);
            SparsePoint {
                position: pos / n,
                color: color / n,
                observers,
            }
        })
        .collect()
}
