//! Evaluation report rendering: a machine-readable JSON document plus a
//! confusion-matrix heatmap and one ROC curve image per class.
//!
//! Rendering is deterministic: the same report produces byte-identical files.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{CoreError, Result};
use crate::metrics::{ConfusionMatrix, FoldAggregate};

/// One operating point of a ROC curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// Per-class summary block of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PerClassSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    /// Recall; doubles as the per-class detection accuracy.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
}

/// Full evaluation report for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: String,
    pub folds: usize,
    /// Metric name -> fold aggregate (mean, std, per-fold values).
    pub metrics: BTreeMap<String, FoldAggregate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion_matrix: Option<ConfusionMatrix>,
    pub per_class: BTreeMap<String, PerClassSummary>,
    /// Class -> ROC curve, used for plot rendering.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub roc_curves: BTreeMap<String, Vec<RocPoint>>,
}

/// Build a ROC curve from scores by sweeping thresholds high to low.
pub fn roc_curve(truth: &[bool], scores: &[f64]) -> Vec<RocPoint> {
    let n_pos = truth.iter().filter(|&&t| t).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return vec![];
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("no NaN scores"));
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0usize;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if truth[idx] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        points.push(RocPoint { fpr: fp as f64 / n_neg as f64, tpr: tp as f64 / n_pos as f64 });
        i = j + 1;
    }
    points
}

const CELL: u32 = 48;
const MARGIN: u32 = 12;

fn heat_color(frac: f64) -> image::Rgb<u8> {
    // white -> blue ramp
    let f = frac.clamp(0.0, 1.0);
    let r = (255.0 - 200.0 * f) as u8;
    let g = (255.0 - 160.0 * f) as u8;
    image::Rgb([r, g, 255])
}

fn render_heatmap(cm: &ConfusionMatrix, path: &Path) -> Result<()> {
    let n = cm.n_classes() as u32;
    let side = 2 * MARGIN + n * CELL;
    let mut img = image::RgbImage::from_pixel(side, side, image::Rgb([255, 255, 255]));
    let max = cm.counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    for (i, row) in cm.counts.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            let color = heat_color(count as f64 / max);
            let ox = MARGIN + j as u32 * CELL;
            let oy = MARGIN + i as u32 * CELL;
            for y in oy..oy + CELL {
                for x in ox..ox + CELL {
                    let border = x == ox || y == oy || x == ox + CELL - 1 || y == oy + CELL - 1;
                    img.put_pixel(x, y, if border { image::Rgb([90, 90, 90]) } else { color });
                }
            }
        }
    }
    img.save(path).map_err(|e| CoreError::image(path, e))
}

const ROC_SIDE: u32 = 512;
const ROC_PAD: u32 = 24;

fn render_roc(points: &[RocPoint], path: &Path) -> Result<()> {
    let mut img = image::RgbImage::from_pixel(ROC_SIDE, ROC_SIDE, image::Rgb([255, 255, 255]));
    let span = (ROC_SIDE - 2 * ROC_PAD) as f64;
    let to_px = |fpr: f64, tpr: f64| -> (i64, i64) {
        let x = ROC_PAD as f64 + fpr.clamp(0.0, 1.0) * span;
        let y = (ROC_SIDE - ROC_PAD) as f64 - tpr.clamp(0.0, 1.0) * span;
        (x.round() as i64, y.round() as i64)
    };
    let mut put = |x: i64, y: i64, c: image::Rgb<u8>| {
        if x >= 0 && y >= 0 && (x as u32) < ROC_SIDE && (y as u32) < ROC_SIDE {
            img.put_pixel(x as u32, y as u32, c);
        }
    };
    // axes and chance diagonal
    for t in 0..=span as i64 {
        let (x0, y0) = to_px(0.0, 0.0);
        put(x0 + t, y0, image::Rgb([0, 0, 0]));
        put(x0, y0 - t, image::Rgb([0, 0, 0]));
        put(x0 + t, y0 - t, image::Rgb([200, 200, 200]));
    }
    // polyline through the curve points
    let gray = image::Rgb([20, 60, 200]);
    for w in points.windows(2) {
        let (x0, y0) = to_px(w[0].fpr, w[0].tpr);
        let (x1, y1) = to_px(w[1].fpr, w[1].tpr);
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
        for s in 0..=steps {
            let x = x0 + (x1 - x0) * s / steps;
            let y = y0 + (y1 - y0) * s / steps;
            put(x, y, gray);
            put(x + 1, y, gray);
            put(x, y + 1, gray);
        }
    }
    img.save(path).map_err(|e| CoreError::image(path, e))
}

/// Write `report.json`, `cm_<task>.png` and one `roc_<task>_<class>.png` per
/// class with a recorded curve. Returns the paths written.
pub fn render_report(report: &TaskReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| CoreError::io(out_dir, e))?;
    let mut written = Vec::new();

    let json_path = out_dir.join("report.json");
    crate::fsutil::write_atomic(&json_path, &serde_json::to_vec_pretty(report)?)?;
    written.push(json_path);

    if let Some(cm) = &report.confusion_matrix {
        let cm_path = out_dir.join(format!("cm_{}.png", report.task));
        render_heatmap(cm, &cm_path)?;
        written.push(cm_path);
    }
    for (class, points) in &report.roc_curves {
        if points.is_empty() {
            continue;
        }
        let roc_path = out_dir.join(format!("roc_{}_{}.png", report.task, class));
        render_roc(points, &roc_path)?;
        written.push(roc_path);
    }
    Ok(written)
}
