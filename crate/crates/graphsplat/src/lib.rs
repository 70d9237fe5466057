//! Region-partitioned Gaussian splatting for trajectory-heavy captures.
//!
//! The pipeline stages map onto the top-level modules:
//!
//! * [`scene_io`] — sparse reconstructions (COLMAP text layout), images,
//!   and a seeded synthetic scene generator with ground truth.
//! * [`traj_graph`] — camera connectivity graphs and balanced BFS
//!   partitioning into spatial regions.
//! * [`splat`] — anisotropic 3D Gaussians and the differentiable CPU
//!   rasterizer (color, depth, normal, opacity buffers).
//! * [`optim`] — photometric + multi-view patch losses, scale-aware
//!   densification, Adam, and the per-region training loops.
//! * [`progressive`] — opacity-ranked progressive compositing of trained
//!   regions for novel views.
//! * [`cli`] — the on-disk workspace and the `synth | partition | train |
//!   render | eval` subcommands.
//!
//! All numeric code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below pin the default double-precision instantiation used by the CLI.

pub mod cli;
pub mod error;
pub mod num;
pub mod optim;
pub mod progressive;
pub mod scene_io;
pub mod splat;
pub mod traj_graph;

pub use error::{Error, Result};
pub use num::Real;

/// Default scalar used by the binary and most tests.
pub type Scalar = f64;

pub type CameraView = scene_io::CameraView<Scalar>;
pub type SparseModel = scene_io::SparseModel<Scalar>;
pub type Image = scene_io::Image<Scalar>;
pub type Gaussian = splat::Gaussian<Scalar>;
pub type GaussianSet = splat::GaussianSet<Scalar>;
pub type FrameBuffers = splat::FrameBuffers<Scalar>;
pub type TrainConfig = optim::TrainConfig<Scalar>;
pub type ProgressiveConfig = progressive::ProgressiveConfig<Scalar>;
pub use traj_graph::{ConnectivityGraph, RegionPartition};
