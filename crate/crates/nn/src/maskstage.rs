//! Batch mask generation and quality control over a manifest.
//!
//! Each record gets a predicted probability map, thresholded at 0.5 into a
//! binary mask, which is then QC'd. Accepted and rejected masks are both
//! written to disk ({0,255} PNGs) so rejections stay auditable; record-level
//! failures are isolated and reported in the summary instead of aborting the
//! batch.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::error::Result;
use crate::segtrain::predict_prob_map;
use crate::unet::{SegmenterConfig, UNet};
use crate::backend::Infer;
use dermpipe_core::dataset::{DatasetManifest, QcStatus};
use dermpipe_core::mask::{binarize, qc_mask, QcPolicy};
use dermpipe_core::preprocess::RgbPlanes;

/// Per-class removal accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcSummaryRow {
    pub class: String,
    pub before: usize,
    pub after: usize,
    pub removed: usize,
    /// Removed count as a share of all records, in percent.
    pub removed_share_of_total_pct: f64,
    /// Removed count as a share of this class, in percent.
    pub removed_rate_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcSummary {
    pub rows: Vec<QcSummaryRow>,
    pub total: QcSummaryRow,
    /// Records that could not be processed at all (unreadable files etc.).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_ids: Vec<String>,
}

fn summary_row(class: &str, before: usize, removed: usize, grand_total: usize) -> QcSummaryRow {
    QcSummaryRow {
        class: class.to_string(),
        before,
        after: before - removed,
        removed,
        removed_share_of_total_pct: if grand_total == 0 {
            0.0
        } else {
            100.0 * removed as f64 / grand_total as f64
        },
        removed_rate_pct: if before == 0 { 0.0 } else { 100.0 * removed as f64 / before as f64 },
    }
}

/// Run segmentation + QC over every record, returning the updated manifest
/// (mask paths and QC statuses filled in) and the per-class summary.
pub fn run_mask_stage(
    manifest: &DatasetManifest,
    model: &UNet<Infer>,
    config: &SegmenterConfig,
    policy: &QcPolicy,
    masks_dir: &Path,
) -> Result<(DatasetManifest, QcSummary)> {
    let mut out = manifest.clone();
    let mut failed = Vec::new();
    let mut before: BTreeMap<String, usize> = BTreeMap::new();
    let mut removed: BTreeMap<String, usize> = BTreeMap::new();

    for record in out.records.iter_mut() {
        let class = record.base_class.map(|c| c.name().to_string()).unwrap_or_else(|| "?".into());
        *before.entry(class.clone()).or_insert(0) += 1;

        let image = match RgbPlanes::load(&record.image_path) {
            Ok(img) => img,
            Err(err) => {
                eprintln!("warning: skipping `{}`: {err}", record.image_id);
                failed.push(record.image_id.clone());
                record.qc_status = QcStatus::Rejected;
                *removed.entry(class).or_insert(0) += 1;
                continue;
            }
        };
        let prob_map = predict_prob_map(model, config, &image);
        let mask = binarize(&prob_map, image.width, image.height, 0.5)?;
        let verdict = qc_mask(&mask, policy);

        let mask_path = masks_dir.join(format!("{}_mask.png", record.image_id));
        mask.save_png(&mask_path)?;
        record.mask_path = Some(mask_path);
        if verdict.accepted() {
            record.qc_status = QcStatus::Accepted;
        } else {
            record.qc_status = QcStatus::Rejected;
            *removed.entry(class).or_insert(0) += 1;
        }
    }

    let grand_total = out.records.len();
    let rows: Vec<QcSummaryRow> = before
        .iter()
        .map(|(class, &n)| summary_row(class, n, *removed.get(class).unwrap_or(&0), grand_total))
        .collect();
    let total_removed: usize = removed.values().sum();
    let summary = QcSummary {
        rows,
        total: summary_row("total", grand_total, total_removed, grand_total),
        failed_ids: failed,
    };
    Ok((out, summary))
}

/// Keep only QC-accepted records.
pub fn accepted_only(manifest: &DatasetManifest) -> DatasetManifest {
    let records = manifest
        .records
        .iter()
        .filter(|r| r.qc_status == QcStatus::Accepted)
        .cloned()
        .collect();
    let mut out = DatasetManifest::new(manifest.source, records);
    out.task = manifest.task;
    out
}
