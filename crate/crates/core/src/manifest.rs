//! JSON dataset manifest binding exported tensors to ground truth.
//!
//! ```json
//! {
//!   "samples": [
//!     {
//!       "id": "img_0001",
//!       "stage4": "feats/img_0001_s4.ssat",
//!       "stage5": "feats/img_0001_s5.ssat",
//!       "weights": "classifier.ssat",
//!       "gt_class": 3,
//!       "predicted_classes": [3, 7, 1, 0, 2],
//!       "gt_boxes": [[4, 2, 20, 18]],
//!       "gt_mask": "masks/img_0001.ssat",
//!       "image_height": 28,
//!       "image_width": 28
//!     }
//!   ]
//! }
//! ```
//!
//! Relative paths resolve against the manifest's directory. Boxes are
//! `[x0, y0, x1, y1]`, half-open, in image pixels; without an image size they
//! are in CAM pixels.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Result, SsaError};
use crate::evaluation::{BoundingBox, LabelGrid};
use crate::io::load_tensor;
use crate::pipeline::{ClassifierWeights, Stage};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    #[serde(default)]
    pub stage3: Option<PathBuf>,
    #[serde(default)]
    pub stage4: Option<PathBuf>,
    #[serde(default)]
    pub stage5: Option<PathBuf>,
    pub weights: PathBuf,
    pub gt_class: usize,
    #[serde(default)]
    pub predicted_classes: Vec<usize>,
    #[serde(default)]
    pub gt_boxes: Vec<[usize; 4]>,
    #[serde(default)]
    pub gt_mask: Option<PathBuf>,
    #[serde(default)]
    pub image_height: Option<usize>,
    #[serde(default)]
    pub image_width: Option<usize>,
}

impl SampleRecord {
    pub fn stage_path(&self, stage: Stage) -> Option<&Path> {
        match stage {
            Stage::S3 => self.stage3.as_deref(),
            Stage::S4 => self.stage4.as_deref(),
            Stage::S5 => self.stage5.as_deref(),
        }
    }

    pub fn image_size(&self) -> Option<(usize, usize)> {
        self.image_height.zip(self.image_width)
    }

    pub fn boxes(&self) -> Result<Vec<BoundingBox>> {
        self.gt_boxes
            .iter()
            .map(|&[x0, y0, x1, y1]| BoundingBox::new(x0, y0, x1, y1))
            .collect()
    }

    fn paths(&self) -> impl Iterator<Item = &Path> {
        [
            self.stage3.as_deref(),
            self.stage4.as_deref(),
            self.stage5.as_deref(),
            Some(self.weights.as_path()),
            self.gt_mask.as_deref(),
        ]
        .into_iter()
        .flatten()
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    samples: Vec<SampleRecord>,
}

#[derive(Debug, Clone)]
pub struct EvalManifest {
    pub samples: Vec<SampleRecord>,
}

impl EvalManifest {
    /// Parse, resolve relative paths and validate every record.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| SsaError::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let file: ManifestFile =
            serde_json::from_str(text).map_err(|e| SsaError::Manifest(e.to_string()))?;
        let mut seen = BTreeSet::new();
        let mut samples = file.samples;
        for rec in &mut samples {
            if !seen.insert(rec.id.clone()) {
                return Err(SsaError::Manifest(format!(
                    "duplicate sample id {:?}",
                    rec.id
                )));
            }
            let resolve = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base_dir.join(&*p);
                }
            };
            for p in [
                &mut rec.stage3,
                &mut rec.stage4,
                &mut rec.stage5,
                &mut rec.gt_mask,
            ]
            .into_iter()
            .flatten()
            {
                resolve(p);
            }
            resolve(&mut rec.weights);
            validate_record(rec).map_err(|e| e.in_sample(&rec.id))?;
        }
        Ok(Self { samples })
    }

    pub fn sample(&self, id: &str) -> Result<&SampleRecord> {
        self.samples
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| SsaError::Manifest(format!("no sample with id {id:?}")))
    }
}

fn validate_record(rec: &SampleRecord) -> Result<()> {
    if let Some(p) = rec.paths().find(|p| !p.is_file()) {
        return Err(SsaError::Manifest(format!(
            "referenced file {} does not exist",
            p.display()
        )));
    }
    if rec.predicted_classes.len() > 5 {
        return Err(SsaError::Manifest(format!(
            "{} predicted classes, at most 5 allowed",
            rec.predicted_classes.len()
        )));
    }
    if rec.image_height.is_some() != rec.image_width.is_some() {
        return Err(SsaError::Manifest(
            "image_height and image_width must be given together".into(),
        ));
    }
    for b in rec.boxes()? {
        if let Some((h, w)) = rec.image_size() {
            if !b.fits(h, w) {
                return Err(SsaError::Manifest(format!(
                    "box {:?} exceeds image {}x{}",
                    [b.x0, b.y0, b.x1, b.y1],
                    h,
                    w
                )));
            }
        }
    }
    Ok(())
}

/// Load the feature maps of `stages` plus stage 5 (the seed source).
pub fn load_features(
    rec: &SampleRecord,
    stages: impl IntoIterator<Item = Stage>,
) -> Result<BTreeMap<Stage, Tensor<f32>>> {
    let mut wanted: BTreeSet<Stage> = stages.into_iter().collect();
    wanted.insert(Stage::S5);
    wanted
        .into_iter()
        .map(|stage| {
            let path = rec
                .stage_path(stage)
                .ok_or(SsaError::MissingStage(stage.number()))?;
            Ok((stage, load_tensor(path)?))
        })
        .collect()
}

pub fn load_weights(rec: &SampleRecord) -> Result<ClassifierWeights<f32>> {
    ClassifierWeights::new(load_tensor(&rec.weights)?)
}

pub fn load_gt_mask(rec: &SampleRecord) -> Result<LabelGrid> {
    let path = rec
        .gt_mask
        .as_deref()
        .ok_or_else(|| SsaError::MissingMask(rec.id.clone()))?;
    LabelGrid::from_tensor(&load_tensor(path)?)
}
