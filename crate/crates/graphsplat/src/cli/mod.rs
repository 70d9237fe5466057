//! Command-line pipeline driver.
//!
//! Five subcommands cover the full workflow inside one workspace
//! directory: `synth` writes a scene, `partition` groups its cameras,
//! `train` fits one region (or the coarse global model), `render` produces
//! images from the trained sets, and `eval` scores held-out views.

pub mod workspace;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::optim::trainer::{self, TrainedRegion};
use crate::progressive::{self, ProgressiveConfig};
use crate::scene_io::{
    colmap, generate_synthetic_scene, image::write_float_buffer, kv, CameraView, Image,
    SparseModel, SynthConfig, TrajectoryKind,
};
use crate::splat::raster::rasterize;
use crate::splat::{tggs, FrameBuffers, GaussianSet};
use crate::traj_graph::{self, ConnectivityGraph, RegionPartition};
use crate::{Scalar, TrainConfig};

use workspace::{fnv1a64, Workspace, REGION_PALETTE};

const SCATTER_SIZE: u32 = 256;

#[derive(Debug, Parser)]
#[command(
    name = "graphsplat",
    about = "Trajectory-graph Gaussian splatting pipeline",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene with ground-truth Gaussians.
    Synth {
        /// Workspace directory to create.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 120)]
        gaussians: usize,
        #[arg(long, default_value_t = 12)]
        views: usize,
        /// Image width and height in pixels.
        #[arg(long, default_value_t = 64)]
        size: u32,
        /// Camera path: orbit, street, or grid.
        #[arg(long, default_value = "orbit")]
        trajectory: TrajectoryKind,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Fraction of Gaussians placed far behind the main content.
        #[arg(long, default_value_t = 0.0)]
        far_fraction: f64,
    },
    /// Split the camera graph into balanced regions.
    Partition {
        #[arg(long)]
        workspace: PathBuf,
        /// Number of regions.
        #[arg(long)]
        regions: usize,
        /// Redo the stage even if it already ran with other settings.
        #[arg(long)]
        force: bool,
    },
    /// Optimize one region, or the downsampled global model.
    Train {
        #[arg(long)]
        workspace: PathBuf,
        /// Region index from the partition stage.
        #[arg(long)]
        region: Option<usize>,
        /// Train the coarse global model instead of a region.
        #[arg(long)]
        global: bool,
        /// Training config override, `key=value`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Redo the stage even if it already ran with other settings.
        #[arg(long)]
        force: bool,
    },
    /// Render one view from the trained models.
    Render {
        #[arg(long)]
        workspace: PathBuf,
        #[arg(long, value_enum)]
        mode: RenderMode,
        /// View id to render.
        #[arg(long)]
        view: u32,
        /// Region index; required in region mode.
        #[arg(long)]
        region: Option<usize>,
        /// Also write depth/normal/opacity buffers next to the image.
        #[arg(long)]
        buffers: bool,
        /// Output image path; defaults into the workspace renders tree.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score held-out views for progressive and merged rendering.
    Eval {
        #[arg(long)]
        workspace: PathBuf,
        /// Report path; defaults into the workspace reports tree.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RenderMode {
    /// Opacity-gated composite of ranked region models.
    Progressive,
    /// All region models merged into one set.
    Naive,
    /// A single region model.
    Region,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            gaussians,
            views,
            size,
            trajectory,
            seed,
            far_fraction,
        } => cmd_synth(
            &out,
            &SynthConfig {
                num_gaussians: gaussians,
                num_views: views,
                image_size: size,
                trajectory,
                rng_seed: seed,
                far_cluster_fraction: far_fraction,
            },
        ),
        Command::Partition {
            workspace,
            regions,
            force,
        } => cmd_partition(&workspace, regions, force),
        Command::Train {
            workspace,
            region,
            global,
            set,
            force,
        } => {
            let target = match (region, global) {
                (Some(i), false) => TrainTarget::Region(i),
                (None, true) => TrainTarget::Global,
                _ => {
                    return Err(Error::Argument(
                        "pass exactly one of --region <index> or --global".into(),
                    ))
                }
            };
            cmd_train(&workspace, target, &set, force)
        }
        Command::Render {
            workspace,
            mode,
            view,
            region,
            buffers,
            out,
        } => cmd_render(&workspace, mode, view, region, buffers, out.as_deref()),
        Command::Eval { workspace, out } => cmd_eval(&workspace, out.as_deref()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainTarget {
    Region(usize),
    Global,
}

pub fn cmd_synth(out: &Path, cfg: &SynthConfig) -> Result<()> {
    let ws = Workspace::create(out)?;
    let scene = generate_synthetic_scene::<Scalar>(cfg)?;
    colmap::write_sparse_dir(ws.sparse_dir(), &scene.model)?;
    for (view, image) in scene.model.views.iter().zip(&scene.images) {
        image.write_ppm(ws.images_dir().join(view.image_name()))?;
    }
    tggs::write_gaussians(&scene.ground_truth, ws.gt_path())?;

    let settings = synth_settings(cfg);
    let mut entries = settings.clone();
    entries.push(("scene".into(), "synthetic".into()));
    ws.update_manifest(&entries)?;
    ws.write_stamp("synth", fnv1a64(&kv::format(&settings)))?;
    println!(
        "synth: {} views, {} points, {} ground-truth gaussians -> {}",
        scene.model.views.len(),
        scene.model.points.len(),
        scene.ground_truth.len(),
        ws.root().display()
    );
    Ok(())
}

fn synth_settings(cfg: &SynthConfig) -> Vec<(String, String)> {
    vec![
        ("far_cluster_fraction".into(), format!("{}", cfg.far_cluster_fraction)),
        ("gaussians".into(), cfg.num_gaussians.to_string()),
        ("image_size".into(), cfg.image_size.to_string()),
        ("seed".into(), cfg.rng_seed.to_string()),
        ("trajectory".into(), cfg.trajectory.name().to_string()),
        ("views".into(), cfg.num_views.to_string()),
    ]
}

pub fn cmd_partition(root: &Path, regions: usize, force: bool) -> Result<()> {
    let ws = Workspace::open(root);
    let settings = format!("regions = {regions}\n");
    if !ws.stage_should_run("partition", fnv1a64(&settings), force)? {
        println!("partition: up to date ({regions} regions)");
        return Ok(());
    }
    let model = ws.load_model::<Scalar>()?;
    let partition = traj_graph::partition_model(&model, regions)?;
    write_text(ws.partition_path(), &traj_graph::format_partition(&partition))?;
    scatter_plot(&model, &partition).write_ppm(ws.partition_scatter_path())?;
    ws.write_stamp("partition", fnv1a64(&settings))?;
    let sizes: Vec<usize> = partition.regions.iter().map(Vec::len).collect();
    println!(
        "partition: {} views into {} regions, sizes {:?}",
        model.views.len(),
        regions,
        sizes
    );
    Ok(())
}

pub fn cmd_train(
    root: &Path,
    target: TrainTarget,
    overrides: &[String],
    force: bool,
) -> Result<()> {
    let ws = Workspace::open(root);
    let mut cfg = TrainConfig::default();
    for line in overrides {
        cfg.apply_kv(line)?;
    }
    cfg.validate()?;
    let config_text = cfg.to_kv();

    let (stage, out_dir) = match target {
        TrainTarget::Region(i) => (format!("train_region_{i:04}"), ws.region_dir(i)),
        TrainTarget::Global => ("train_global".to_string(), ws.global_dir()),
    };
    if !ws.stage_should_run(&stage, fnv1a64(&config_text), force)? {
        println!("{stage}: up to date");
        return Ok(());
    }

    let model = ws.load_model::<Scalar>()?;
    let started = Instant::now();
    let trained = match target {
        TrainTarget::Region(i) => {
            let partition = load_partition(&ws)?;
            if i >= partition.num_regions() {
                return Err(Error::Argument(format!(
                    "region {i} out of range; the partition has {} regions",
                    partition.num_regions()
                )));
            }
            let points: Vec<usize> = partition
                .point_regions
                .iter()
                .enumerate()
                .filter(|(_, rs)| rs.contains(&i))
                .map(|(p, _)| p)
                .collect();
            let graph = ConnectivityGraph::build(&model)?;
            trainer::train_region(&model, &graph, &partition.regions[i], &points, &cfg)?
        }
        TrainTarget::Global => trainer::train_global_coarse(&model, &cfg)?,
    };
    let elapsed = started.elapsed().as_secs_f64();

    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    tggs::write_gaussians(&trained.set, out_dir.join("model.tggs"))?;
    write_text(out_dir.join("history.csv"), &history_csv(&trained))?;
    write_text(out_dir.join("config.txt"), &config_text)?;
    ws.write_stamp(&stage, fnv1a64(&config_text))?;

    let final_loss = trained
        .history
        .last()
        .map(|(_, s)| s.total)
        .unwrap_or(0.0);
    println!(
        "{stage}: {} gaussians, final loss {final_loss:.6}, {elapsed:.1}s",
        trained.set.len()
    );
    Ok(())
}

pub fn cmd_render(
    root: &Path,
    mode: RenderMode,
    view_id: u32,
    region: Option<usize>,
    buffers: bool,
    out: Option<&Path>,
) -> Result<()> {
    let ws = Workspace::open(root);
    let model = ws.load_model::<Scalar>()?;
    let view = model
        .view(view_id)
        .ok_or_else(|| Error::Argument(format!("view {view_id} is not in the model")))?;
    let background = Vector3::zeros();

    match mode {
        RenderMode::Progressive => {
            if buffers {
                return Err(Error::Argument(
                    "progressive mode composites color only; use naive or region mode \
                     for geometry buffers"
                        .into(),
                ));
            }
            let image = render_progressive_view(&ws, view)?;
            let path = output_path(&ws, out, "progressive", view_id);
            write_image(&image, &path)?;
            println!("render: progressive view {view_id} -> {}", path.display());
        }
        RenderMode::Naive => {
            let sets = load_region_sets(&ws)?;
            let refs: Vec<&GaussianSet<Scalar>> = sets.iter().collect();
            let frame = progressive::naive_merge_render(&refs, view, background)?;
            let path = output_path(&ws, out, "naive", view_id);
            write_frame(&frame, &path, buffers)?;
            println!("render: naive view {view_id} -> {}", path.display());
        }
        RenderMode::Region => {
            let i = region.ok_or_else(|| {
                Error::Argument("region mode needs --region <index>".into())
            })?;
            let set = load_gaussians(
                ws.region_dir(i).join("model.tggs"),
                &format!("region {i}"),
            )?;
            let frame = rasterize(&set, view, background)?;
            let path = output_path(&ws, out, &format!("region_{i:04}"), view_id);
            write_frame(&frame, &path, buffers)?;
            println!("render: region {i} view {view_id} -> {}", path.display());
        }
    }
    Ok(())
}

pub fn cmd_eval(root: &Path, out: Option<&Path>) -> Result<()> {
    let ws = Workspace::open(root);
    let model = ws.load_model::<Scalar>()?;
    let partition = load_partition(&ws)?;
    let region_sets = load_region_sets(&ws)?;
    let global = load_gaussians(ws.global_dir().join("model.tggs"), "the global model")?;
    let prog_cfg = ProgressiveConfig::default();

    let started = Instant::now();
    // overall ranking across every view, reported for orientation; each
    // evaluated view is composited with its own view-specific ranking
    let all_views: Vec<&CameraView<Scalar>> = model.views.iter().collect();
    let order = progressive::rank_regions(&region_sets, &global, &all_views, &prog_cfg)?;
    let region_refs: Vec<&GaussianSet<Scalar>> = region_sets.iter().collect();
    let rank_seconds = started.elapsed().as_secs_f64();

    let mut test_ids: Vec<u32> = partition
        .regions
        .iter()
        .flat_map(|ids| trainer::split_train_test(ids).1)
        .collect();
    test_ids.sort_unstable();
    test_ids.dedup();

    let mut rows = Vec::new();
    let mut sums = [0.0f64; 4];
    let render_started = Instant::now();
    for &id in &test_ids {
        let view = model
            .view(id)
            .ok_or_else(|| Error::Integrity(format!("partition names unknown view {id}")))?;
        let target = view.load_image()?;
        let view_order = progressive::rank_regions(&region_sets, &global, &[view], &prog_cfg)?;
        let ranked: Vec<&GaussianSet<Scalar>> =
            view_order.iter().map(|&i| &region_sets[i]).collect();
        let prog = progressive::progressive_render(&ranked, view, &prog_cfg)?;
        let naive = progressive::naive_merge_render(&region_refs, view, prog_cfg.background)?;
        let metrics = [
            crate::optim::loss::psnr(&prog, &target)?,
            crate::optim::loss::ssim_and_grad(&prog, &target)?.0,
            crate::optim::loss::psnr(&naive.color, &target)?,
            crate::optim::loss::ssim_and_grad(&naive.color, &target)?.0,
        ];
        for (s, m) in sums.iter_mut().zip(metrics) {
            *s += m;
        }
        rows.push((id, metrics));
    }
    let render_seconds = render_started.elapsed().as_secs_f64();

    if rows.is_empty() {
        return Err(Error::Argument("no held-out views to evaluate".into()));
    }
    let n = rows.len() as f64;
    let mut report = String::new();
    report.push_str(&format!("regions = {}\n", region_sets.len()));
    report.push_str(&format!(
        "region_order = {}\n",
        order
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",")
    ));
    report.push_str(&format!("test_views = {}\n", rows.len()));
    report.push_str("view psnr_progressive ssim_progressive psnr_naive ssim_naive\n");
    for (id, m) in &rows {
        report.push_str(&format!(
            "{id} {:.6} {:.6} {:.6} {:.6}\n",
            m[0], m[1], m[2], m[3]
        ));
    }
    report.push_str(&format!(
        "mean {:.6} {:.6} {:.6} {:.6}\n",
        sums[0] / n,
        sums[1] / n,
        sums[2] / n,
        sums[3] / n
    ));
    report.push_str(&format!(
        "delta_progressive_minus_naive {:.6} {:.6}\n",
        (sums[0] - sums[2]) / n,
        (sums[1] - sums[3]) / n
    ));

    let report_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ws.eval_report_path());
    write_text(&report_path, &report)?;
    // Wall-clock timings change run to run, so they live in their own file
    // and never touch the deterministic report.
    write_text(
        ws.timings_path(),
        &format!(
            "rank_seconds = {rank_seconds:.3}\nrender_seconds = {render_seconds:.3}\n\
             total_seconds = {:.3}\n",
            started.elapsed().as_secs_f64()
        ),
    )?;
    print!("{report}");
    println!("eval: report -> {}", report_path.display());
    Ok(())
}

fn render_progressive_view(
    ws: &Workspace,
    view: &CameraView<Scalar>,
) -> Result<Image<Scalar>> {
    let region_sets = load_region_sets(ws)?;
    let global = load_gaussians(ws.global_dir().join("model.tggs"), "the global model")?;
    let cfg = ProgressiveConfig::default();
    // region relevance is view-dependent, so every rendered view gets its
    // own ranking against the coarse global model
    let order = progressive::rank_regions(&region_sets, &global, &[view], &cfg)?;
    let ranked: Vec<&GaussianSet<Scalar>> = order.iter().map(|&i| &region_sets[i]).collect();
    progressive::progressive_render(&ranked, view, &cfg)
}

fn load_partition(ws: &Workspace) -> Result<RegionPartition> {
    let path = ws.partition_path();
    let text = read_text_hint(&path, "run the partition command first")?;
    traj_graph::parse_partition(&text)
}

fn load_region_sets(ws: &Workspace) -> Result<Vec<GaussianSet<Scalar>>> {
    let partition = load_partition(ws)?;
    (0..partition.num_regions())
        .map(|i| {
            load_gaussians(
                ws.region_dir(i).join("model.tggs"),
                &format!("region {i}"),
            )
        })
        .collect()
}

fn load_gaussians(path: PathBuf, what: &str) -> Result<GaussianSet<Scalar>> {
    if !path.exists() {
        return Err(Error::Argument(format!(
            "{what} has no trained model at {}; run the train command first",
            path.display()
        )));
    }
    tggs::read_gaussians(&path)
}

fn output_path(ws: &Workspace, out: Option<&Path>, mode: &str, view_id: u32) -> PathBuf {
    out.map(Path::to_path_buf)
        .unwrap_or_else(|| ws.render_path(mode, view_id))
}

fn write_image(image: &Image<Scalar>, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    image.write_ppm(path)
}

fn write_frame(frame: &FrameBuffers<Scalar>, path: &Path, buffers: bool) -> Result<()> {
    write_image(&frame.color, path)?;
    if !buffers {
        return Ok(());
    }
    let (w, h) = (frame.width, frame.height);
    write_float_buffer(path.with_extension("depth.bin"), w, h, 1, &frame.depth)?;
    let normals: Vec<Scalar> = frame
        .normal
        .iter()
        .flat_map(|n| [n.x, n.y, n.z])
        .collect();
    write_float_buffer(path.with_extension("normal.bin"), w, h, 3, &normals)?;
    write_float_buffer(
        path.with_extension("opacity.bin"),
        w,
        h,
        1,
        &frame.accum_opacity,
    )
}

fn history_csv(trained: &TrainedRegion<Scalar>) -> String {
    let mut s = String::from("iteration,total,l1,ssim,mv,mv_pairs\n");
    for (iter, stats) in &trained.history {
        s.push_str(&format!(
            "{iter},{:.9e},{:.9e},{:.9e},{:.9e},{}\n",
            stats.total, stats.l1, stats.ssim, stats.mv, stats.mv_pairs
        ));
    }
    s
}

fn read_text_hint(path: &Path, hint: &str) -> Result<String> {
    match std::fs::read_to_string(path) {
        Ok(t) => Ok(t),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::Argument(format!(
            "{} is missing; {hint}",
            path.display()
        ))),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Top-down scatter of camera centers and sparse points, colored by
/// region, projected onto the two world axes with the largest extent.
fn scatter_plot(model: &SparseModel<Scalar>, partition: &RegionPartition) -> Image<Scalar> {
    let mut positions: Vec<Vector3<Scalar>> =
        model.views.iter().map(CameraView::camera_center).collect();
    positions.extend(model.points.iter().map(|p| p.position));
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in &positions {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let extent = hi - lo;
    let mut axes = [0usize, 1, 2];
    axes.sort_by(|&a, &b| extent[b].partial_cmp(&extent[a]).unwrap());
    let (ax, ay) = (axes[0].min(axes[1]), axes[0].max(axes[1]));

    let size = SCATTER_SIZE;
    let mut image = Image::from_fn(size, size, |_, _| Vector3::repeat(1.0));
    let margin = 0.05;
    let scale = |v: f64, axis: usize| -> i64 {
        let span = extent[axis].max(1e-12);
        let t = (v - lo[axis]) / span;
        ((margin + t * (1.0 - 2.0 * margin)) * (size as f64 - 1.0)).round() as i64
    };
    let palette_color = |region: usize| -> Vector3<Scalar> {
        let (r, g, b) = REGION_PALETTE[region % REGION_PALETTE.len()];
        Vector3::new(r as f64, g as f64, b as f64) / 255.0
    };
    let mut put = |x: i64, y: i64, c: Vector3<Scalar>| {
        if (0..size as i64).contains(&x) && (0..size as i64).contains(&y) {
            image.set(x as u32, y as u32, c);
        }
    };

    for (p, regions) in model.points.iter().zip(&partition.point_regions) {
        if let Some(&region) = regions.first() {
            put(
                scale(p.position[ax], ax),
                scale(p.position[ay], ay),
                palette_color(region),
            );
        }
    }
    for view in &model.views {
        let region = partition.region_of_view(view.id).unwrap_or(0);
        let c = view.camera_center();
        let (cx, cy) = (scale(c[ax], ax), scale(c[ay], ay));
        for dy in -1..=1 {
            for dx in -1..=1 {
                put(cx + dx, cy + dy, palette_color(region));
            }
        }
    }
    image
}
