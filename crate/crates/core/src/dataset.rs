//! Manifest ingestion and task relabeling.
//!
//! A [`DatasetManifest`] is the frozen inventory of one image collection:
//! one [`ImageRecord`] per metadata row, optionally carrying a ground-truth
//! mask path and a diagnosis label. Manifests are persisted as JSON and every
//! downstream stage consumes a manifest file, never a directory scan.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use crate::class::{BaseClass, TaskGrouping, TaskId};
use crate::error::{CoreError, Result};

/// Where a manifest's records come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Isic2018,
    Ham10000,
    Custom,
}

/// Quality-control status of a record's generated mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QcStatus {
    #[default]
    Pending,
    Accepted,
    Rejected,
}

/// One dermatoscopic image plus its metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub image_path: PathBuf,
    /// Ground-truth or generated segmentation mask, when one exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    /// Diagnosis label, when label metadata is present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_class: Option<BaseClass>,
    /// Task label index assigned by `apply_grouping`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_label: Option<usize>,
    #[serde(default)]
    pub qc_status: QcStatus,
}

/// Ordered collection of records from one source.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source: Source,
    /// Task the records were relabeled for, once `apply_grouping` ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskId>,
    pub record_count: usize,
    pub records: Vec<ImageRecord>,
}

impl DatasetManifest {
    pub fn new(source: Source, records: Vec<ImageRecord>) -> Self {
        DatasetManifest { source, task: None, record_count: records.len(), records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Per-class record counts, keyed in canonical class order.
    pub fn class_counts(&self) -> BTreeMap<BaseClass, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            if let Some(c) = r.base_class {
                *counts.entry(c).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Per-task-label counts; meaningful after `apply_grouping`.
    pub fn label_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            if let Some(l) = r.task_label {
                *counts.entry(l).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Structural checks: unique ids, count field consistency, source mask rules.
    pub fn validate(&self) -> Result<()> {
        if self.record_count != self.records.len() {
            return Err(CoreError::InvalidConfig(format!(
                "record_count {} != records length {}",
                self.record_count,
                self.records.len()
            )));
        }
        let mut seen = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            if !seen.insert(r.image_id.as_str()) {
                return Err(CoreError::DuplicateId(r.image_id.clone()));
            }
        }
        match self.source {
            Source::Isic2018 => {
                if let Some(r) = self.records.iter().find(|r| r.mask_path.is_none()) {
                    return Err(CoreError::InvalidConfig(format!(
                        "isic2018 record `{}` has no mask path",
                        r.image_id
                    )));
                }
            }
            Source::Ham10000 | Source::Custom => {}
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        crate::fsutil::write_atomic(path, &json)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
        let manifest: DatasetManifest = serde_json::from_slice(&bytes)?;
        manifest.validate()?;
        Ok(manifest)
    }
}

/// Candidate file extensions for image lookup, in probe order.
const IMAGE_EXTENSIONS: [&str; 4] = ["jpg", "jpeg", "png", "JPG"];

fn locate_image(root: &Path, image_id: &str) -> Option<PathBuf> {
    IMAGE_EXTENSIONS.iter().map(|ext| root.join(format!("{image_id}.{ext}"))).find(|p| p.is_file())
}

/// Build a manifest from a metadata CSV.
///
/// The CSV needs at least an `image_id` column; a `dx` column, when present
/// and non-empty, must hold one of the seven class tokens. Extra columns are
/// ignored. Image files are looked up under `root`; for `isic2018` sources a
/// mask is expected next to each image at `<image_id>_segmentation.png`.
///
/// File existence is verified for every record; all missing files are
/// collected into a single error rather than failing on the first.
pub fn load_manifest(root: &Path, metadata_file: &Path, source: Source) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(CoreError::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root not found"),
        ));
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(metadata_file)
        .map_err(CoreError::from)?;

    let headers = reader.headers()?.clone();
    let id_col = headers.iter().position(|h| h.trim() == "image_id");
    let dx_col = headers.iter().position(|h| h.trim() == "dx");

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2; // 1-based, after the header
        if row.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let id_col = id_col.ok_or_else(|| CoreError::Metadata {
            row: 1,
            msg: "metadata header must contain an `image_id` column".into(),
        })?;
        let image_id = row
            .get(id_col)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| CoreError::Metadata { row: line, msg: "empty image_id".into() })?
            .to_string();
        if !seen.insert(image_id.clone()) {
            return Err(CoreError::DuplicateId(image_id));
        }
        let base_class = match dx_col.and_then(|c| row.get(c)).map(str::trim) {
            Some("") | None => None,
            Some(tok) => Some(tok.parse::<BaseClass>().map_err(|e| CoreError::Metadata {
                row: line,
                msg: e.to_string(),
            })?),
        };
        let mask_path = match source {
            Source::Isic2018 => Some(root.join(format!("{image_id}_segmentation.png"))),
            Source::Ham10000 | Source::Custom => None,
        };
        records.push(ImageRecord {
            image_id,
            image_path: PathBuf::new(), // resolved below
            mask_path,
            base_class,
            task_label: None,
            qc_status: QcStatus::Pending,
        });
    }

    // Resolve and verify files in parallel; merge results id-ordered so the
    // outcome is independent of scheduling.
    let resolved: Vec<(usize, Option<PathBuf>, bool)> = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let img = locate_image(root, &r.image_id);
            let mask_ok = r.mask_path.as_ref().map(|m| m.is_file()).unwrap_or(true);
            (i, img, mask_ok)
        })
        .collect();

    let mut missing: Vec<String> = Vec::new();
    for (i, img, mask_ok) in resolved {
        match img {
            Some(p) if mask_ok => records[i].image_path = p,
            _ => missing.push(records[i].image_id.clone()),
        }
    }
    if !missing.is_empty() {
        missing.sort();
        return Err(CoreError::MissingImages { ids: missing });
    }

    let manifest = DatasetManifest::new(source, records);
    manifest.validate()?;
    Ok(manifest)
}

/// Restrict a manifest to the records a task admits and attach task labels.
///
/// Records whose base class falls outside the task's filter are dropped;
/// unlabeled records are an error for any grouping other than a custom
/// passthrough, since the class map cannot cover them.
pub fn apply_grouping(manifest: &DatasetManifest, task: TaskId) -> Result<DatasetManifest> {
    let grouping: TaskGrouping = task.grouping();
    let mut records = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        let Some(class) = r.base_class else {
            return Err(CoreError::NotAdmitted(r.image_id.clone(), "<unlabeled>".into()));
        };
        // records outside the task's filter are dropped
        if let Some(idx) = grouping.label_index(class) {
            let mut r = r.clone();
            r.task_label = Some(idx);
            records.push(r);
        }
    }
    let mut out = DatasetManifest::new(manifest.source, records);
    out.task = Some(task);
    Ok(out)
}
