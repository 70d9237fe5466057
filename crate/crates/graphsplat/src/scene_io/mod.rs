//! Scene input/output: camera views, sparse reconstructions, images, and
//! the synthetic scene generator used for ground-truth testing.

pub mod colmap;
pub mod image;
pub mod kv;
pub mod synth;

use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::num::Real;

pub use image::{GrayImage, Image};
pub use synth::{generate_synthetic_scene, SynthConfig, SynthScene, TrajectoryKind};

/// Reference to a view's photograph: a file on disk or a decoded image.
#[derive(Debug, Clone, PartialEq)]
pub enum ImageRef<T> {
    Path(PathBuf),
    Data(Arc<Image<T>>),
}

/// A posed pinhole camera. `rotation` maps world to camera coordinates and
/// `translation` is the world origin expressed in the camera frame, so a
/// world point X lands at `rotation * X + translation`. The camera looks
/// down its +z axis; x goes right and y down in the image.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView<T> {
    pub id: u32,
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
    pub width: u32,
    pub height: u32,
    pub image_ref: Option<ImageRef<T>>,
}

const ORTHONORMALITY_TOL: f64 = 1e-9;

/// Smallest image side a view may carry.
pub const MIN_VIEW_SIZE: u32 = 16;

impl<T: Real> CameraView<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(Error::Argument(format!("view {}: focal lengths must be positive", self.id)));
        }
        if self.width < MIN_VIEW_SIZE || self.height < MIN_VIEW_SIZE {
            return Err(Error::Argument(format!(
                "view {}: image must be at least {MIN_VIEW_SIZE}x{MIN_VIEW_SIZE}",
                self.id
            )));
        }
        let gram = self.rotation.transpose() * self.rotation;
        let mut max_dev = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                max_dev = max_dev.max((gram[(i, j)].as_f64() - want).abs());
            }
        }
        if max_dev > ORTHONORMALITY_TOL {
            return Err(Error::Argument(format!(
                "view {}: rotation is not orthonormal (deviation {max_dev:.3e})",
                self.id
            )));
        }
        Ok(())
    }

    /// Camera position in world coordinates.
    pub fn camera_center(&self) -> Vector3<T> {
        -(self.rotation.transpose() * self.translation)
    }

    /// World point into camera coordinates.
    #[inline]
    pub fn world_to_camera(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    /// Intrinsic matrix K.
    pub fn intrinsics(&self) -> Matrix3<T> {
        Matrix3::new(
            self.fx,
            T::zero(),
            self.cx,
            T::zero(),
            self.fy,
            self.cy,
            T::zero(),
            T::zero(),
            T::one(),
        )
    }

    /// Pinhole projection of a camera-frame point to continuous pixel
    /// coordinates. The caller is responsible for checking depth.
    #[inline]
    pub fn project_camera_point(&self, p: &Vector3<T>) -> Vector2<T> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Jacobian of [`Self::project_camera_point`] at a camera-frame point.
    pub fn projection_jacobian(&self, p: &Vector3<T>) -> Matrix2x3<T> {
        let inv_z = T::one() / p.z;
        let inv_z2 = inv_z * inv_z;
        Matrix2x3::new(
            self.fx * inv_z,
            T::zero(),
            -self.fx * p.x * inv_z2,
            T::zero(),
            self.fy * inv_z,
            -self.fy * p.y * inv_z2,
        )
    }

    /// Camera-frame point on the ray through a continuous pixel coordinate
    /// at the given depth (z in the camera frame).
    #[inline]
    pub fn back_project(&self, px: T, py: T, depth: T) -> Vector3<T> {
        Vector3::new((px - self.cx) / self.fx * depth, (py - self.cy) / self.fy * depth, depth)
    }

    /// Loads the view's image from its reference.
    pub fn load_image(&self) -> Result<Image<T>> {
        match &self.image_ref {
            Some(ImageRef::Data(img)) => Ok((**img).clone()),
            Some(ImageRef::Path(p)) => Image::read_ppm(p),
            None => Err(Error::Argument(format!("view {} has no image reference", self.id))),
        }
    }

    /// Image-space name used when serializing records.
    pub fn image_name(&self) -> String {
        match &self.image_ref {
            Some(ImageRef::Path(p)) => p.to_string_lossy().into_owned(),
            _ => format!("view_{:04}.ppm", self.id),
        }
    }
}

/// One sparse 3D point with its color and the views that observed it.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePoint<T> {
    pub position: Vector3<T>,
    pub color: Vector3<T>,
    pub observers: Vec<u32>,
}

/// A sparse reconstruction: views, points with observation tracks, and
/// optional pairwise match counts between views.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseModel<T> {
    pub views: Vec<CameraView<T>>,
    pub points: Vec<SparsePoint<T>>,
    pub match_edges: Vec<(u32, u32, u32)>,
}

impl<T: Real> SparseModel<T> {
    pub fn view(&self, id: u32) -> Option<&CameraView<T>> {
        self.views.iter().find(|v| v.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        for v in &self.views {
            v.validate()?;
        }
        let ids: std::collections::BTreeSet<u32> = self.views.iter().map(|v| v.id).collect();
        if ids.len() != self.views.len() {
            return Err(Error::Integrity("duplicate view ids".into()));
        }
        for (i, p) in self.points.iter().enumerate() {
            for &o in &p.observers {
                if !ids.contains(&o) {
                    return Err(Error::Integrity(format!(
                        "point {i} lists unknown observer view {o}"
                    )));
                }
            }
        }
        for &(a, b, _) in &self.match_edges {
            if a == b {
                return Err(Error::Integrity(format!("match edge ({a}, {b}) is a self-loop")));
            }
            if !ids.contains(&a) || !ids.contains(&b) {
                return Err(Error::Integrity(format!("match edge ({a}, {b}) references unknown view")));
            }
        }
        Ok(())
    }
}

/// Shared-track covisibility counts for each unordered view pair, sorted by
/// (min id, max id). Pairs that share no track are omitted.
pub fn derive_covisibility_edges<T: Real>(model: &SparseModel<T>) -> Vec<(u32, u32, u32)> {
    let mut counts: std::collections::BTreeMap<(u32, u32), u32> = std::collections::BTreeMap::new();
    for p in &model.points {
        let mut obs: Vec<u32> = p.observers.clone();
        obs.sort_unstable();
        obs.dedup();
        for i in 0..obs.len() {
            for j in i + 1..obs.len() {
                *counts.entry((obs[i], obs[j])).or_insert(0) += 1;
            }
        }
    }
    counts.into_iter().map(|((a, b), w)| (a, b, w)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(id: u32) -> CameraView<f64> {
        CameraView {
            id,
            fx: 100.0,
            fy: 100.0,
            cx: 32.0,
            cy: 32.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            width: 64,
            height: 64,
            image_ref: None,
        }
    }

    fn point(observers: &[u32]) -> SparsePoint<f64> {
        SparsePoint {
            position: Vector3::zeros(),
            color: Vector3::new(0.5, 0.5, 0.5),
            observers: observers.to_vec(),
        }
    }

    #[test]
    fn covisibility_counts_shared_tracks() {
        let model = SparseModel {
            views: vec![view(1), view(2), view(3)],
            points: (0..7).map(|_| point(&[1, 2])).collect(),
            match_edges: vec![],
        };
        assert_eq!(derive_covisibility_edges(&model), vec![(1, 2, 7)]);
    }

    #[test]
    fn disjoint_tracks_produce_no_edge() {
        let model = SparseModel {
            views: vec![view(1), view(2)],
            points: vec![point(&[1]), point(&[2])],
            match_edges: vec![],
        };
        assert!(derive_covisibility_edges(&model).is_empty());
    }

    #[test]
    fn three_views_sharing_five_points_form_a_triangle() {
        let model = SparseModel {
            views: vec![view(1), view(2), view(3)],
            points: (0..5).map(|_| point(&[1, 2, 3])).collect(),
            match_edges: vec![],
        };
        assert_eq!(
            derive_covisibility_edges(&model),
            vec![(1, 2, 5), (1, 3, 5), (2, 3, 5)]
        );
    }

    #[test]
    fn covisibility_is_point_order_invariant() {
        let points = vec![point(&[1, 2]), point(&[2, 3]), point(&[1, 2, 3])];
        let mut reversed = points.clone();
        reversed.reverse();
        let m1 = SparseModel { views: vec![view(1), view(2), view(3)], points, match_edges: vec![] };
        let m2 = SparseModel { views: m1.views.clone(), points: reversed, match_edges: vec![] };
        assert_eq!(derive_covisibility_edges(&m1), derive_covisibility_edges(&m2));
    }

    #[test]
    fn validate_rejects_bad_rotation_and_dangling_refs() {
        let mut v = view(1);
        v.rotation[(0, 0)] = 1.5;
        assert!(v.validate().is_err());

        let model = SparseModel {
            views: vec![view(1)],
            points: vec![point(&[9])],
            match_edges: vec![],
        };
        assert!(matches!(model.validate(), Err(Error::Integrity(_))));
    }

    #[test]
    fn camera_center_inverts_the_pose() {
        let look = synth::look_at::<f64>(
            &Vector3::new(1.0, 2.0, 3.0),
            &Vector3::new(0.0, 0.0, 0.0),
            &Vector3::new(0.0, 0.0, 1.0),
        );
        let mut v = view(1);
        v.rotation = look.0;
        v.translation = look.1;
        let c = v.camera_center();
        assert!((c - Vector3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
        assert!(v.world_to_camera(&c).norm() < 1e-12);
    }
}
