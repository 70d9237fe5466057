//! Depth-sorted front-to-back compositing of projected Gaussians.
//!
//! The per-pixel walk is the single source of truth for traversal order and
//! guard thresholds; the forward pass, the backward pass, and any parallel
//! split all route through it, so executions are bit-identical regardless
//! of scheduling.

use nalgebra::{Matrix2, Vector2, Vector3};
use rayon::prelude::*;

use crate::error::Result;
use crate::num::Real;
use crate::scene_io::CameraView;

use super::project::{gaussian_normal, project_gaussian};
use super::{
    FrameBuffers, GaussianSet, ALPHA_CLAMP, ALPHA_SKIP, OPACITY_EPS, TRANSMITTANCE_STOP,
};

/// One Gaussian prepared for a specific view.
#[derive(Debug, Clone)]
pub(crate) struct SplatView<T> {
    pub source: usize,
    pub depth: T,
    pub mean2d: Vector2<T>,
    pub inv_cov: Matrix2<T>,
    pub alpha: T,
    pub color: Vector3<T>,
    pub normal: Vector3<T>,
    pub x0: u32,
    pub x1: u32,
    pub y0: u32,
    pub y1: u32,
}

/// A completed forward pass that can also run the backward pass.
pub struct Rasterization<'a, T: Real> {
    pub(crate) set: &'a GaussianSet<T>,
    pub(crate) view: &'a CameraView<T>,
    pub(crate) background: Vector3<T>,
    pub(crate) splats: Vec<SplatView<T>>,
    pub(crate) offsets: Vec<u32>,
    pub(crate) items: Vec<u32>,
    pub(crate) buffers: FrameBuffers<T>,
}

/// Renders the set into color/depth/normal/opacity buffers.
pub fn rasterize<T: Real>(
    set: &GaussianSet<T>,
    view: &CameraView<T>,
    background: Vector3<T>,
) -> Result<FrameBuffers<T>> {
    Ok(Rasterization::prepare(set, view, background)?.into_buffers())
}

impl<'a, T: Real> Rasterization<'a, T> {
    /// Validates, projects, bins, and composites.
    pub fn prepare(
        set: &'a GaussianSet<T>,
        view: &'a CameraView<T>,
        background: Vector3<T>,
    ) -> Result<Self> {
        set.validate()?;
        view.validate()?;

        let mut splats: Vec<SplatView<T>> = Vec::with_capacity(set.len());
        for (i, g) in set.gaussians.iter().enumerate() {
            let Some(p) = project_gaussian(g, view, i) else { continue };
            let alpha = g.opacity();
            // footprint where alpha·exp(-q/2) can still reach the skip
            // threshold: q <= 2·ln(255·alpha)
            let qmax = T::of(2.0) * (alpha / T::of(ALPHA_SKIP)).ln();
            if qmax <= T::zero() {
                continue;
            }
            let det = p.cov2d[(0, 0)] * p.cov2d[(1, 1)] - p.cov2d[(0, 1)] * p.cov2d[(1, 0)];
            let inv_cov = Matrix2::new(
                p.cov2d[(1, 1)] / det,
                -p.cov2d[(0, 1)] / det,
                -p.cov2d[(1, 0)] / det,
                p.cov2d[(0, 0)] / det,
            );
            let rx = (qmax * p.cov2d[(0, 0)]).sqrt();
            let ry = (qmax * p.cov2d[(1, 1)]).sqrt();
            let Some((x0, x1)) = pixel_span(p.mean2d.x, rx, view.width) else { continue };
            let Some((y0, y1)) = pixel_span(p.mean2d.y, ry, view.height) else { continue };
            splats.push(SplatView {
                source: i,
                depth: p.depth,
                mean2d: p.mean2d,
                inv_cov,
                alpha,
                color: g.color,
                normal: gaussian_normal(g, view),
                x0,
                x1,
                y0,
                y1,
            });
        }

        // global compositing order; the position tie-break keeps the result
        // independent of input permutation
        splats.sort_by(|a, b| {
            let ka = &set.gaussians[a.source].position;
            let kb = &set.gaussians[b.source].position;
            (a.depth, ka.x, ka.y, ka.z, a.source)
                .partial_cmp(&(b.depth, kb.x, kb.y, kb.z, b.source))
                .expect("finite sort keys")
        });

        let n_px = (view.width * view.height) as usize;
        let mut counts = vec![0u32; n_px];
        for s in &splats {
            for y in s.y0..=s.y1 {
                let row = y * view.width;
                for x in s.x0..=s.x1 {
                    counts[(row + x) as usize] += 1;
                }
            }
        }
        let mut offsets = vec![0u32; n_px + 1];
        for i in 0..n_px {
            offsets[i + 1] = offsets[i] + counts[i];
        }
        let mut cursor = offsets.clone();
        let mut items = vec![0u32; offsets[n_px] as usize];
        for (k, s) in splats.iter().enumerate() {
            for y in s.y0..=s.y1 {
                let row = y * view.width;
                for x in s.x0..=s.x1 {
                    let pix = (row + x) as usize;
                    items[cursor[pix] as usize] = k as u32;
                    cursor[pix] += 1;
                }
            }
        }

        let mut r = Rasterization {
            set,
            view,
            background,
            splats,
            offsets,
            items,
            buffers: FrameBuffers::new(view.width, view.height, background),
        };
        r.composite();
        Ok(r)
    }

    /// Walks one pixel's splats front to back, invoking the visitor with
    /// `(splat index, alpha_hat, gaussian falloff, clamped, transmittance
    /// before)` for every contributing splat. Returns final transmittance.
    #[inline]
    pub(crate) fn walk_pixel(
        &self,
        x: u32,
        y: u32,
        mut visit: impl FnMut(usize, T, T, bool, T),
    ) -> T {
        let px = T::of(x as f64 + 0.5);
        let py = T::of(y as f64 + 0.5);
        let pix = (y * self.view.width + x) as usize;
        let clamp = T::of(ALPHA_CLAMP);
        let skip = T::of(ALPHA_SKIP);
        let stop = T::of(TRANSMITTANCE_STOP);
        let half = T::of(0.5);
        let mut trans = T::one();
        for &k in &self.items[self.offsets[pix] as usize..self.offsets[pix + 1] as usize] {
            let s = &self.splats[k as usize];
            let dx = px - s.mean2d.x;
            let dy = py - s.mean2d.y;
            let q = s.inv_cov[(0, 0)] * dx * dx
                + (s.inv_cov[(0, 1)] + s.inv_cov[(1, 0)]) * dx * dy
                + s.inv_cov[(1, 1)] * dy * dy;
            let g = (-half * q).exp();
            let raw = s.alpha * g;
            let clamped = raw > clamp;
            let a = if clamped { clamp } else { raw };
            if a < skip {
                continue;
            }
            visit(k as usize, a, g, clamped, trans);
            trans *= T::one() - a;
            if trans < stop {
                break;
            }
        }
        trans
    }

    fn composite(&mut self) {
        let width = self.view.width;
        let rows: Vec<RowOut<T>> = (0..self.view.height)
            .into_par_iter()
            .map(|y| {
                let mut row = RowOut::new(width as usize);
                for x in 0..width {
                    let mut color = Vector3::zeros();
                    let mut depth_raw = T::zero();
                    let mut normal_raw = Vector3::zeros();
                    let mut opacity = T::zero();
                    let trans = self.walk_pixel(x, y, |k, a, _g, _clamped, t| {
                        let s = &self.splats[k];
                        let w = a * t;
                        color += s.color * w;
                        depth_raw += s.depth * w;
                        normal_raw += s.normal * w;
                        opacity += w;
                    });
                    color += self.background * trans;
                    opacity = opacity.min(T::one());
                    let xi = x as usize;
                    row.color[xi] = color;
                    row.opacity[xi] = opacity;
                    if opacity > T::of(OPACITY_EPS) {
                        row.depth[xi] = depth_raw / opacity;
                        let norm = normal_raw.norm();
                        row.normal[xi] = if norm > T::of(1e-30) {
                            normal_raw / norm
                        } else {
                            Vector3::new(T::zero(), T::zero(), -T::one())
                        };
                    }
                }
                row
            })
            .collect();

        for (y, row) in rows.into_iter().enumerate() {
            let y = y as u32;
            for x in 0..width {
                let xi = x as usize;
                let pix = self.buffers.pixel_index(x, y);
                self.buffers.color.set(x, y, row.color[xi]);
                self.buffers.depth[pix] = row.depth[xi];
                self.buffers.normal[pix] = row.normal[xi];
                self.buffers.accum_opacity[pix] = row.opacity[xi];
            }
        }
    }

    /// Index into the original set for the `k`-th prepared splat.
    pub(crate) fn splat_source(&self, k: usize) -> usize {
        self.splats[k].source
    }

    pub fn buffers(&self) -> &FrameBuffers<T> {
        &self.buffers
    }

    pub fn into_buffers(self) -> FrameBuffers<T> {
        self.buffers
    }
}

struct RowOut<T> {
    color: Vec<Vector3<T>>,
    depth: Vec<T>,
    normal: Vec<Vector3<T>>,
    opacity: Vec<T>,
}

impl<T: Real> RowOut<T> {
    fn new(width: usize) -> Self {
        RowOut {
            color: vec![Vector3::zeros(); width],
            depth: vec![T::zero(); width],
            normal: vec![Vector3::zeros(); width],
            opacity: vec![T::zero(); width],
        }
    }
}

/// Inclusive pixel index range whose centers fall inside `[c - r, c + r]`,
/// clamped to the image; `None` when empty.
fn pixel_span<T: Real>(center: T, radius: T, size: u32) -> Option<(u32, u32)> {
    let half = T::of(0.5);
    let lo = (center - radius - half).ceil().as_f64();
    let hi = (center + radius - half).floor().as_f64();
    let lo = lo.max(0.0);
    let hi = hi.min(size as f64 - 1.0);
    if lo > hi {
        return None;
    }
    Some((lo as u32, hi as u32))
}
