//! Classification metrics: confusion matrices, binary accuracy /
//! sensitivity / specificity, ROC-AUC, one-vs-rest multiclass reductions with
//! micro/macro averaging, and cross-fold aggregation.
//!
//! Ratios with a zero denominator are reported as absent rather than zero.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{CoreError, Result};

/// Row = true class, column = predicted class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|row| row[j]).sum()
    }

    pub fn diagonal_sum(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }
}

/// Count (true, predicted) label pairs into a confusion matrix.
pub fn confusion_matrix(
    true_labels: &[&str],
    pred_labels: &[&str],
    class_names: &[&str],
) -> Result<ConfusionMatrix> {
    if true_labels.len() != pred_labels.len() {
        return Err(CoreError::DimensionMismatch(format!(
            "{} true labels vs {} predictions",
            true_labels.len(),
            pred_labels.len()
        )));
    }
    let index: BTreeMap<&str, usize> =
        class_names.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let n = class_names.len();
    let mut counts = vec![vec![0u64; n]; n];
    for (t, p) in true_labels.iter().zip(pred_labels.iter()) {
        let ti = *index.get(t).ok_or_else(|| CoreError::UnknownLabel(t.to_string()))?;
        let pi = *index.get(p).ok_or_else(|| CoreError::UnknownLabel(p.to_string()))?;
        counts[ti][pi] += 1;
    }
    Ok(ConfusionMatrix {
        class_names: class_names.iter().map(|s| s.to_string()).collect(),
        counts,
    })
}

/// Accuracy, sensitivity and specificity of a binary confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub positive_class: String,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    /// Attached by the caller once scores are available.
    pub auc: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Derive binary metrics from a 2x2 confusion matrix.
pub fn binary_metrics(cm: &ConfusionMatrix, positive_class: &str) -> Result<BinaryMetrics> {
    if cm.n_classes() != 2 {
        return Err(CoreError::NotBinary(cm.n_classes()));
    }
    let pos = cm
        .class_names
        .iter()
        .position(|n| n == positive_class)
        .ok_or_else(|| CoreError::UnknownLabel(positive_class.to_string()))?;
    let neg = 1 - pos;
    let tp = cm.counts[pos][pos];
    let fn_ = cm.counts[pos][neg];
    let tn = cm.counts[neg][neg];
    let fp = cm.counts[neg][pos];
    Ok(BinaryMetrics {
        positive_class: positive_class.to_string(),
        accuracy: ratio(tp + tn, tp + tn + fp + fn_),
        sensitivity: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
        auc: None,
    })
}

/// Area under the ROC curve via the rank statistic, with half credit for
/// ties: equals P(score_pos > score_neg) + 0.5 * P(score_pos == score_neg).
pub fn roc_auc(true_binary: &[bool], scores: &[f64]) -> Result<f64> {
    if true_binary.len() != scores.len() {
        return Err(CoreError::DimensionMismatch(format!(
            "{} labels vs {} scores",
            true_binary.len(),
            scores.len()
        )));
    }
    let n_pos = true_binary.iter().filter(|&&t| t).count();
    let n_neg = true_binary.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CoreError::UndefinedAuc(format!(
            "need both classes, got {n_pos} positive / {n_neg} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("scores must not be NaN"));

    // average ranks over tied score groups (1-based midranks)
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0usize;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if true_binary[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let n_pos = n_pos as f64;
    let n_neg = n_neg as f64;
    Ok((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// Per-class and micro/macro averaged metrics for a multiclass problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassMetrics {
    pub per_class_auc: BTreeMap<String, Option<f64>>,
    pub per_class_precision: BTreeMap<String, Option<f64>>,
    pub per_class_recall: BTreeMap<String, Option<f64>>,
    pub per_class_f1: BTreeMap<String, Option<f64>>,
    pub auc_micro: Option<f64>,
    pub auc_macro: Option<f64>,
    pub precision_micro: Option<f64>,
    pub precision_macro: Option<f64>,
    pub f1_micro: Option<f64>,
    pub f1_macro: Option<f64>,
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn f1_of(precision: Option<f64>, recall: Option<f64>) -> Option<f64> {
    match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    }
}

fn mean_present(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// Compute the full multiclass suite from true label indices and a row-per-
/// sample probability matrix.
///
/// Predictions are argmax rows (lowest index wins ties). Per-class AUCs use
/// the one-vs-rest reduction; micro AUC pools every (binarized label, score)
/// pair; macro values are unweighted means over classes present in the true
/// labels, with a warning listing any skipped class.
pub fn multiclass_metrics(
    true_labels: &[usize],
    prob_matrix: &[Vec<f64>],
    class_names: &[&str],
) -> Result<MulticlassMetrics> {
    let n = class_names.len();
    if true_labels.len() != prob_matrix.len() {
        return Err(CoreError::DimensionMismatch(format!(
            "{} labels vs {} probability rows",
            true_labels.len(),
            prob_matrix.len()
        )));
    }
    for (i, row) in prob_matrix.iter().enumerate() {
        if row.len() != n {
            return Err(CoreError::DimensionMismatch(format!(
                "probability row {i} has {} entries for {n} classes",
                row.len()
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-4 {
            return Err(CoreError::InvalidConfig(format!(
                "probability row {i} sums to {sum}, expected 1"
            )));
        }
    }
    if let Some(&bad) = true_labels.iter().find(|&&t| t >= n) {
        return Err(CoreError::UnknownLabel(format!("label index {bad}")));
    }

    let preds: Vec<usize> = prob_matrix.iter().map(|row| argmax(row)).collect();
    let true_names: Vec<&str> = true_labels.iter().map(|&t| class_names[t]).collect();
    let pred_names: Vec<&str> = preds.iter().map(|&p| class_names[p]).collect();
    let cm = confusion_matrix(&true_names, &pred_names, class_names)?;

    let mut warnings = Vec::new();
    let mut per_class_auc = BTreeMap::new();
    let mut per_class_precision = BTreeMap::new();
    let mut per_class_recall = BTreeMap::new();
    let mut per_class_f1 = BTreeMap::new();

    // pooled pairs for micro AUC
    let mut micro_truth: Vec<bool> = Vec::with_capacity(true_labels.len() * n);
    let mut micro_scores: Vec<f64> = Vec::with_capacity(true_labels.len() * n);

    let mut micro_tp = 0u64;
    let mut micro_fp = 0u64;
    let mut micro_fn = 0u64;

    for (c, name) in class_names.iter().enumerate() {
        let truth: Vec<bool> = true_labels.iter().map(|&t| t == c).collect();
        let scores: Vec<f64> = prob_matrix.iter().map(|row| row[c]).collect();
        micro_truth.extend(&truth);
        micro_scores.extend(&scores);

        let class_present = truth.iter().any(|&t| t);
        let auc = if class_present && !truth.iter().all(|&t| t) {
            Some(roc_auc(&truth, &scores)?)
        } else {
            if !class_present {
                warnings.push(format!("class `{name}` absent from true labels"));
            }
            None
        };
        per_class_auc.insert(name.to_string(), auc);

        let tp = cm.counts[c][c];
        let fp = cm.col_sum(c) - tp;
        let fn_ = cm.row_sum(c) - tp;
        micro_tp += tp;
        micro_fp += fp;
        micro_fn += fn_;
        let precision = ratio(tp, tp + fp);
        let recall = if class_present { ratio(tp, tp + fn_) } else { None };
        per_class_precision.insert(name.to_string(), if class_present { precision } else { None });
        per_class_recall.insert(name.to_string(), recall);
        per_class_f1.insert(
            name.to_string(),
            if class_present { f1_of(precision, recall) } else { None },
        );
    }

    let auc_micro = roc_auc(&micro_truth, &micro_scores).ok();
    let precision_micro = ratio(micro_tp, micro_tp + micro_fp);
    let recall_micro = ratio(micro_tp, micro_tp + micro_fn);
    let f1_micro = f1_of(precision_micro, recall_micro);

    Ok(MulticlassMetrics {
        auc_macro: mean_present(per_class_auc.values().cloned()),
        precision_macro: mean_present(per_class_precision.values().cloned()),
        f1_macro: mean_present(per_class_f1.values().cloned()),
        per_class_auc,
        per_class_precision,
        per_class_recall,
        per_class_f1,
        auc_micro,
        precision_micro,
        f1_micro,
        accuracy: ratio(cm.diagonal_sum(), cm.total()),
        warnings,
    })
}

/// Index of the largest value; the lowest index wins exact ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Binary decision: positive exactly when the score exceeds the threshold.
pub fn decide_binary(p_positive: f64, threshold: f64) -> bool {
    p_positive > threshold
}

/// Mean and spread of one metric across folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAggregate {
    pub metric_name: String,
    pub per_fold: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n-1 denominator); absent below two folds.
    pub std: Option<f64>,
}

/// Aggregate one metric over folds with sample standard deviation.
pub fn aggregate_folds(metric_name: &str, per_fold: &[f64]) -> Result<FoldAggregate> {
    if per_fold.is_empty() {
        return Err(CoreError::EmptyInput("no fold values to aggregate".into()));
    }
    let n = per_fold.len() as f64;
    let mean = per_fold.iter().sum::<f64>() / n;
    let std = (per_fold.len() >= 2).then(|| {
        let ss: f64 = per_fold.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1.0)).sqrt()
    });
    Ok(FoldAggregate { metric_name: metric_name.to_string(), per_fold: per_fold.to_vec(), mean, std })
}
