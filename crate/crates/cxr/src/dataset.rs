//! Generated datasets on disk: one PNG per sample plus `manifest.jsonl`.

use std::path::{Path, PathBuf};

use cxr_core::atlas::{Atlas, NormalizedBox, Side};
use cxr_core::image::Plane;
use cxr_core::report::Lexicon;
use cxr_core::synth::{generate_dataset, DatasetConfig, PhantomSpec, ReportTemplates, Sample, SplitTag};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::files::{read_jsonl, sha256_hex, write_jsonl};
use crate::imageio::{load_gray, save_gray};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const IMAGE_DIR: &str = "images";

/// One row of `manifest.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub index: usize,
    pub split: SplitTag,
    /// Relative to the manifest's directory.
    pub image: String,
    pub report: String,
    pub right_opacity: bool,
    pub left_opacity: bool,
    pub right_box: Option<NormalizedBox>,
    pub left_box: Option<NormalizedBox>,
    pub spec: PhantomSpec,
}

impl SampleRecord {
    pub fn from_sample(s: &Sample) -> Self {
        SampleRecord {
            id: s.id.clone(),
            index: s.index,
            split: s.split,
            image: format!("{IMAGE_DIR}/{}.png", s.id),
            report: s.report.clone(),
            right_opacity: s.truth.right.is_some(),
            left_opacity: s.truth.left.is_some(),
            right_box: s.truth.right,
            left_box: s.truth.left,
            spec: s.spec.clone(),
        }
    }

    pub fn truth_box(&self, side: Side) -> Option<NormalizedBox> {
        match side {
            Side::Right => self.right_box,
            Side::Left => self.left_box,
        }
    }

    /// `[right opacity, left opacity]`.
    pub fn labels(&self) -> [bool; 2] {
        [self.right_opacity, self.left_opacity]
    }

    fn check(&self) -> Result<()> {
        if self.right_opacity != self.right_box.is_some() || self.left_opacity != self.left_box.is_some() {
            return Err(Error::Invalid(format!(
                "sample {}: opacity flags disagree with truth boxes",
                self.id
            )));
        }
        Ok(())
    }
}

/// A record with its pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedSample {
    pub record: SampleRecord,
    pub image: Plane,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub manifest: PathBuf,
    pub samples: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub right_positive: usize,
    pub left_positive: usize,
    pub hashes: DatasetHashes,
}

/// SHA-256 of the manifest file and of all image files concatenated in
/// manifest order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHashes {
    pub manifest_sha256: String,
    pub images_sha256: String,
}

/// Generates the dataset and writes it under `dir`.
pub fn write_dataset(
    dir: &Path,
    config: &DatasetConfig,
    atlas: &Atlas,
    templates: &ReportTemplates,
    lexicon: &Lexicon,
) -> Result<DatasetSummary> {
    let samples = generate_dataset(config, atlas, templates, lexicon)?;
    let records: Vec<SampleRecord> = samples.iter().map(SampleRecord::from_sample).collect();
    for (s, r) in samples.iter().zip(&records) {
        save_gray(&dir.join(&r.image), &s.image)?;
    }
    let manifest = dir.join(MANIFEST_FILE);
    write_jsonl(&manifest, &records)?;
    summarize(&manifest, &records)
}

pub fn read_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let records: Vec<SampleRecord> = read_jsonl(path)?;
    if records.is_empty() {
        return Err(Error::format(path, "manifest has no samples"));
    }
    for r in &records {
        r.check()?;
    }
    Ok(records)
}

fn base_dir(manifest: &Path) -> &Path {
    manifest.parent().unwrap_or_else(|| Path::new("."))
}

/// Reads the manifest and every image it lists.
pub fn load_dataset(manifest: &Path) -> Result<Vec<LoadedSample>> {
    let base = base_dir(manifest);
    read_manifest(manifest)?
        .into_iter()
        .map(|record| {
            let image = load_gray(&base.join(&record.image))?;
            if image.height != record.spec.image_size || image.width != record.spec.image_size {
                return Err(Error::Invalid(format!(
                    "{}: image is {}x{}, spec says {}",
                    record.image, image.height, image.width, record.spec.image_size
                )));
            }
            Ok(LoadedSample { record, image })
        })
        .collect()
}

pub fn hash_dataset(manifest: &Path, records: &[SampleRecord]) -> Result<DatasetHashes> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(manifest).map_err(|e| Error::io(manifest, e))?;
    let base = base_dir(manifest);
    let mut h = Sha256::new();
    for r in records {
        let p = base.join(&r.image);
        h.update(std::fs::read(&p).map_err(|e| Error::io(&p, e))?);
    }
    Ok(DatasetHashes {
        manifest_sha256: sha256_hex(&bytes),
        images_sha256: h.finalize().iter().map(|b| format!("{b:02x}")).collect(),
    })
}

pub fn summarize(manifest: &Path, records: &[SampleRecord]) -> Result<DatasetSummary> {
    let count = |t: SplitTag| records.iter().filter(|r| r.split == t).count();
    Ok(DatasetSummary {
        manifest: manifest.to_path_buf(),
        samples: records.len(),
        train: count(SplitTag::Train),
        val: count(SplitTag::Val),
        test: count(SplitTag::Test),
        right_positive: records.iter().filter(|r| r.right_opacity).count(),
        left_positive: records.iter().filter(|r| r.left_opacity).count(),
        hashes: hash_dataset(manifest, records)?,
    })
}

pub fn split_of(samples: &[LoadedSample], split: SplitTag) -> Vec<&LoadedSample> {
    samples.iter().filter(|s| s.record.split == split).collect()
}

pub fn parse_split(name: &str) -> Result<SplitTag> {
    match name {
        "train" => Ok(SplitTag::Train),
        "val" => Ok(SplitTag::Val),
        "test" => Ok(SplitTag::Test),
        other => Err(Error::Invalid(format!("unknown split `{other}`"))),
    }
}
