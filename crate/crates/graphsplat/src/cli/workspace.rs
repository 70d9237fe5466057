//! On-disk workspace shared by the subcommands: directory layout, the
//! manifest with stage stamps, and the config hashing that guards reruns.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::num::Real;
use crate::scene_io::{colmap, kv, ImageRef, SparseModel};

/// FNV-1a 64-bit hash of a configuration text; stable across runs and
/// platforms, used to detect settings drift between pipeline stages.
pub fn fnv1a64(text: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Fixed palette for region visualizations; indices wrap.
pub const REGION_PALETTE: [(u8, u8, u8); 12] = [
    (230, 25, 75),
    (60, 180, 75),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (210, 245, 60),
    (170, 110, 40),
    (128, 0, 0),
    (0, 128, 128),
    (255, 215, 180),
];

/// A pipeline directory. All paths used by the subcommands go through
/// here so the layout is defined once.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn open(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    /// Opens the directory, creating it and its fixed subdirectories.
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let ws = Workspace::open(root);
        for dir in [
            ws.root.clone(),
            ws.sparse_dir(),
            ws.images_dir(),
            ws.root.join("gt"),
            ws.partition_dir(),
            ws.regions_dir(),
            ws.global_dir(),
            ws.renders_dir(),
            ws.reports_dir(),
        ] {
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(ws)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.txt")
    }

    pub fn sparse_dir(&self) -> PathBuf {
        self.root.join("sparse")
    }

    pub fn images_dir(&self) -> PathBuf {
        self.root.join("images")
    }

    pub fn gt_path(&self) -> PathBuf {
        self.root.join("gt").join("model.tggs")
    }

    pub fn partition_dir(&self) -> PathBuf {
        self.root.join("partition")
    }

    pub fn partition_path(&self) -> PathBuf {
        self.partition_dir().join("partition.txt")
    }

    pub fn partition_scatter_path(&self) -> PathBuf {
        self.partition_dir().join("regions.ppm")
    }

    pub fn regions_dir(&self) -> PathBuf {
        self.root.join("regions")
    }

    pub fn region_dir(&self, index: usize) -> PathBuf {
        self.regions_dir().join(format!("region_{index:04}"))
    }

    pub fn global_dir(&self) -> PathBuf {
        self.root.join("global")
    }

    pub fn renders_dir(&self) -> PathBuf {
        self.root.join("renders")
    }

    pub fn render_path(&self, mode: &str, view_id: u32) -> PathBuf {
        self.renders_dir()
            .join(mode)
            .join(format!("view_{view_id:04}.ppm"))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn eval_report_path(&self) -> PathBuf {
        self.reports_dir().join("eval.txt")
    }

    pub fn timings_path(&self) -> PathBuf {
        self.reports_dir().join("timings.txt")
    }

    /// Manifest as key/value pairs; missing file reads as empty.
    pub fn read_manifest(&self) -> Result<Vec<(String, String)>> {
        let path = self.manifest_path();
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(&path, e)),
        };
        Ok(kv::parse(&text)?
            .into_iter()
            .map(|(_, k, v)| (k, v))
            .collect())
    }

    /// Inserts or replaces keys, keeping the manifest sorted by key.
    pub fn update_manifest(&self, updates: &[(String, String)]) -> Result<()> {
        let mut entries = self.read_manifest()?;
        for (k, v) in updates {
            match entries.iter_mut().find(|(key, _)| key == k) {
                Some(slot) => slot.1 = v.clone(),
                None => entries.push((k.clone(), v.clone())),
            }
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let path = self.manifest_path();
        std::fs::write(&path, kv::format(&entries)).map_err(|e| Error::io(&path, e))
    }

    pub fn manifest_value(&self, key: &str) -> Result<Option<String>> {
        Ok(self
            .read_manifest()?
            .into_iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v))
    }

    /// Gate for a stage rerun. Returns `true` when the stage should run:
    /// no stamp yet, a forced run, or unchanged settings whose outputs are
    /// simply recomputed on request. A stamp from *different* settings
    /// without `force` is an error so stale outputs cannot be mixed in.
    pub fn stage_should_run(&self, stage: &str, config_hash: u64, force: bool) -> Result<bool> {
        let key = format!("stage_{stage}");
        let new = format!("{config_hash:016x}");
        match self.manifest_value(&key)? {
            None => Ok(true),
            Some(_) if force => Ok(true),
            Some(old) if old == new => Ok(false),
            Some(old) => Err(Error::Argument(format!(
                "stage '{stage}' was completed with different settings \
                 (stamp {old}, requested {new}); pass --force to redo it"
            ))),
        }
    }

    pub fn write_stamp(&self, stage: &str, config_hash: u64) -> Result<()> {
        self.update_manifest(&[(
            format!("stage_{stage}"),
            format!("{config_hash:016x}"),
        )])
    }

    /// Loads the sparse model and anchors relative image names onto the
    /// workspace image directory.
    pub fn load_model<T: Real>(&self) -> Result<SparseModel<T>> {
        let mut model = colmap::load_sparse_dir(self.sparse_dir())?;
        let images = self.images_dir();
        for view in &mut model.views {
            if let Some(ImageRef::Path(p)) = &view.image_ref {
                if p.is_relative() {
                    view.image_ref = Some(ImageRef::Path(images.join(p)));
                }
            }
        }
        Ok(model)
    }
}
