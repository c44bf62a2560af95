//! Deterministic holdout splits and k-fold plans.
//!
//! Plans are produced once from a manifest and a seed, persisted as JSON with
//! lexicographically sorted ids, and consumed frozen by every later stage.
//! Fold training sets are always derived as the complement of the fold's test
//! set, never stored.
//!
//! Two allocation rules are used for holdout sizes:
//!
//! * labeled manifests: per-class largest-remainder allocation of
//!   `ratio * class_size` across the three partitions, which keeps every
//!   class within one record of its exact quota;
//! * unlabeled manifests (single stratum): sequential allocation — the test
//!   share is taken first, rounded up, then the validation share is rounded
//!   up out of the remainder and training keeps the rest. This mirrors the
//!   common practice of chaining two holdout splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::class::TaskId;
use crate::dataset::DatasetManifest;
use crate::error::{CoreError, Result};

/// Three-way holdout plan over image ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskId>,
    pub seed: u64,
    pub ratios: [f64; 3],
    /// Partition name -> sorted ids. Names are `train`, `val`, `test`.
    pub partitions: BTreeMap<String, Vec<String>>,
}

/// K-way fold plan; only the test side of each fold is stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskId>,
    pub seed: u64,
    pub k: usize,
    /// Partition name -> sorted ids. Names are `fold0` .. `fold{k-1}`.
    pub partitions: BTreeMap<String, Vec<String>>,
}

pub const PART_NAMES: [&str; 3] = ["train", "val", "test"];

impl SplitPlan {
    pub fn part(&self, name: &str) -> &[String] {
        self.partitions.get(name).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.part("train").len(), self.part("val").len(), self.part("test").len()]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_atomic(path, &serde_json::to_vec_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

impl FoldPlan {
    pub fn fold_test_ids(&self, fold: usize) -> &[String] {
        self.partitions.get(&format!("fold{fold}")).map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Training ids of a fold: everything not in its test set.
    pub fn fold_train_ids(&self, fold: usize) -> Vec<String> {
        let test: BTreeSet<&String> = self.fold_test_ids(fold).iter().collect();
        let mut train: Vec<String> = self
            .partitions
            .values()
            .flatten()
            .filter(|id| !test.contains(id))
            .cloned()
            .collect();
        train.sort();
        train
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_atomic(path, &serde_json::to_vec_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

fn check_ratios(ratios: [f64; 3]) -> Result<()> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(CoreError::BadRatios(ratios));
    }
    Ok(())
}

/// Largest-remainder allocation of `n` items across parts with the given
/// ratios. Ties on the fractional remainder go to the earlier partition.
fn largest_remainder(n: usize, ratios: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(n - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Sequential allocation for a single stratum: test first (rounded up), then
/// val out of the remainder (rounded up), train keeps the rest.
fn sequential_counts(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let test = ((ratios[2] * n as f64).ceil() as usize).min(n);
    let rest = n - test;
    let val = if ratios[1] > 0.0 { ((ratios[1] * rest as f64).ceil() as usize).min(rest) } else { 0 };
    let train = rest - val;
    [train, val, test]
}

/// Group record ids by class (or a single unlabeled stratum), shuffled per
/// stratum with a seeded generator.
fn strata(manifest: &DatasetManifest, seed: u64) -> Vec<Vec<String>> {
    // Strata keyed by task label when grouped, else base class, else one pool.
    let mut groups: BTreeMap<i64, Vec<String>> = BTreeMap::new();
    for r in &manifest.records {
        let key = match (r.task_label, r.base_class) {
            (Some(l), _) => l as i64,
            (None, Some(c)) => c.index() as i64,
            (None, None) => -1,
        };
        groups.entry(key).or_default().push(r.image_id.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups
        .into_values()
        .map(|mut ids| {
            ids.sort(); // canonical base order, independent of manifest order
            ids.shuffle(&mut rng);
            ids
        })
        .collect()
}

fn labeled(manifest: &DatasetManifest) -> bool {
    manifest.records.iter().any(|r| r.task_label.is_some() || r.base_class.is_some())
}

/// Produce a stratified train/val/test plan.
///
/// Same manifest, ratios and seed always yield a byte-identical plan; a
/// different seed permutes membership but not the per-class sizes.
pub fn make_holdout_split(
    manifest: &DatasetManifest,
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitPlan> {
    check_ratios(ratios)?;
    let mut partitions: BTreeMap<String, Vec<String>> =
        PART_NAMES.iter().map(|n| (n.to_string(), Vec::new())).collect();

    if labeled(manifest) {
        for ids in strata(manifest, seed) {
            let counts = largest_remainder(ids.len(), &ratios);
            let mut offset = 0usize;
            for (part, &take) in PART_NAMES.iter().zip(counts.iter()) {
                partitions.get_mut(*part).unwrap().extend(ids[offset..offset + take].iter().cloned());
                offset += take;
            }
        }
    } else {
        let mut pools = strata(manifest, seed);
        let ids = pools.pop().unwrap_or_default();
        let [train, val, _test] = sequential_counts(ids.len(), ratios);
        partitions.get_mut("train").unwrap().extend(ids[..train].iter().cloned());
        partitions.get_mut("val").unwrap().extend(ids[train..train + val].iter().cloned());
        partitions.get_mut("test").unwrap().extend(ids[train + val..].iter().cloned());
    }

    for ids in partitions.values_mut() {
        ids.sort();
    }
    Ok(SplitPlan { task: manifest.task, seed, ratios, partitions })
}

/// Produce a stratified k-fold plan.
///
/// Each class contributes `floor(n_c / k)` records to every fold; the
/// remainder records are dealt round-robin starting at an offset that rotates
/// across classes, which keeps both the per-class and the total fold sizes
/// within one of each other.
pub fn make_folds(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(CoreError::BadFoldCount(k));
    }
    if k > manifest.len() {
        return Err(CoreError::TooManyFolds { k, n: manifest.len() });
    }
    let mut folds: Vec<Vec<String>> = vec![Vec::new(); k];
    let mut offset = 0usize;
    for ids in strata(manifest, seed) {
        if ids.len() < k {
            eprintln!(
                "warning: stratum with {} record(s) cannot reach all {k} folds",
                ids.len()
            );
        }
        let base = ids.len() / k;
        let extra = ids.len() % k;
        let mut cursor = 0usize;
        let mut sizes = vec![base; k];
        for j in 0..extra {
            sizes[(offset + j) % k] += 1;
        }
        offset = (offset + extra) % k;
        for (fold, &size) in folds.iter_mut().zip(sizes.iter()) {
            fold.extend(ids[cursor..cursor + size].iter().cloned());
            cursor += size;
        }
    }
    let mut partitions = BTreeMap::new();
    for (i, mut ids) in folds.into_iter().enumerate() {
        ids.sort();
        partitions.insert(format!("fold{i}"), ids);
    }
    Ok(FoldPlan { task: manifest.task, seed, k, partitions })
}

/// `|count(class, part) - ratio_part * n_class| <= 1` for every class and
/// partition. Vacuously true for unlabeled manifests.
pub fn check_stratification(manifest: &DatasetManifest, plan: &SplitPlan) -> Result<()> {
    let mut class_of: BTreeMap<&str, i64> = BTreeMap::new();
    for r in &manifest.records {
        let key = match (r.task_label, r.base_class) {
            (Some(l), _) => l as i64,
            (None, Some(c)) => c.index() as i64,
            (None, None) => continue,
        };
        class_of.insert(r.image_id.as_str(), key);
    }
    let mut class_sizes: BTreeMap<i64, usize> = BTreeMap::new();
    for &c in class_of.values() {
        *class_sizes.entry(c).or_insert(0) += 1;
    }
    for (part, ratio) in PART_NAMES.iter().zip(plan.ratios.iter()) {
        let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
        for id in plan.part(part) {
            if let Some(&c) = class_of.get(id.as_str()) {
                *counts.entry(c).or_insert(0) += 1;
            }
        }
        for (&class, &n_class) in &class_sizes {
            let got = *counts.get(&class).unwrap_or(&0) as f64;
            let quota = ratio * n_class as f64;
            if (got - quota).abs() > 1.0 + 1e-9 {
                return Err(CoreError::InvalidConfig(format!(
                    "class {class} in `{part}`: {got} records vs quota {quota:.2}"
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::class::BaseClass;
    use crate::dataset::{DatasetManifest, ImageRecord, QcStatus, Source};
    use std::collections::HashSet;

    fn manifest_unlabeled(n: usize) -> DatasetManifest {
        let records = (0..n)
            .map(|i| ImageRecord {
                image_id: format!("img_{i:05}"),
                image_path: format!("img_{i:05}.jpg").into(),
                mask_path: None,
                base_class: None,
                task_label: None,
                qc_status: QcStatus::Pending,
            })
            .collect();
        DatasetManifest::new(Source::Isic2018, records)
    }

    fn manifest_labeled(counts: &[(BaseClass, usize)]) -> DatasetManifest {
        let mut records = Vec::new();
        for (class, n) in counts {
            for i in 0..*n {
                records.push(ImageRecord {
                    image_id: format!("{}_{i:05}", class.name()),
                    image_path: format!("{}_{i:05}.jpg", class.name()).into(),
                    mask_path: None,
                    base_class: Some(*class),
                    task_label: None,
                    qc_status: QcStatus::Pending,
                });
            }
        }
        DatasetManifest::new(Source::Ham10000, records)
    }

    fn post_qc_counts() -> Vec<(BaseClass, usize)> {
        vec![
            (BaseClass::Akiec, 262),
            (BaseClass::Bcc, 388),
            (BaseClass::Bkl, 915),
            (BaseClass::Df, 88),
            (BaseClass::Mel, 1008),
            (BaseClass::Nv, 6489),
            (BaseClass::Vasc, 88),
        ]
    }

    fn assert_partition(plan_ids: Vec<&[String]>, universe: &HashSet<String>) {
        let mut seen = HashSet::new();
        for ids in &plan_ids {
            for id in *ids {
                assert!(seen.insert(id.clone()), "id {id} appears twice");
            }
        }
        assert_eq!(&seen, universe);
    }

    #[test]
    fn unlabeled_split_sizes() {
        let m = manifest_unlabeled(2594);
        let plan = make_holdout_split(&m, [0.70, 0.10, 0.20], 7).unwrap();
        assert_eq!(plan.sizes(), [1867, 208, 519]);
        let universe: HashSet<String> = m.records.iter().map(|r| r.image_id.clone()).collect();
        assert_partition(vec![plan.part("train"), plan.part("val"), plan.part("test")], &universe);
    }

    #[test]
    fn unlabeled_split_second_ratio_set() {
        // 80/5/15 chained the same way: test = ceil(0.15*2594) = 390,
        // val = ceil(0.05*2204) = 111, train = 2093.
        let m = manifest_unlabeled(2594);
        let plan = make_holdout_split(&m, [0.80, 0.05, 0.15], 7).unwrap();
        let [train, val, test] = plan.sizes();
        assert_eq!(train + val + test, 2594);
        assert_eq!(test, 390);
    }

    #[test]
    fn labeled_split_totals() {
        let m = manifest_labeled(&post_qc_counts());
        let plan = make_holdout_split(&m, [0.70, 0.13, 0.17], 11).unwrap();
        assert_eq!(plan.sizes(), [6467, 1200, 1571]);
        check_stratification(&m, &plan).unwrap();
    }

    #[test]
    fn identity_ratio_split() {
        let m = manifest_labeled(&[(BaseClass::Mel, 5), (BaseClass::Nv, 9)]);
        let plan = make_holdout_split(&m, [1.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(plan.sizes(), [14, 0, 0]);
    }

    #[test]
    fn split_determinism_and_seed_sensitivity() {
        let m = manifest_labeled(&post_qc_counts());
        let a = make_holdout_split(&m, [0.70, 0.13, 0.17], 42).unwrap();
        let b = make_holdout_split(&m, [0.70, 0.13, 0.17], 42).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());

        let c = make_holdout_split(&m, [0.70, 0.13, 0.17], 43).unwrap();
        assert_eq!(a.sizes(), c.sizes());
        assert_ne!(a.partitions, c.partitions);
    }

    #[test]
    fn bad_ratios_rejected() {
        let m = manifest_unlabeled(10);
        assert!(make_holdout_split(&m, [0.5, 0.2, 0.2], 0).is_err());
        assert!(make_holdout_split(&m, [1.2, -0.1, -0.1], 0).is_err());
    }

    #[test]
    fn fold_sizes_cancer_grouping() {
        let m = manifest_labeled(&post_qc_counts());
        let g = crate::dataset::apply_grouping(&m, crate::class::TaskId::CancerVsNoncancer).unwrap();
        let plan = make_folds(&g, 5, 9).unwrap();
        let mut sizes: Vec<usize> = (0..5).map(|i| plan.fold_test_ids(i).len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, [1847, 1847, 1848, 1848, 1848]);
        for i in 0..5 {
            let train = plan.fold_train_ids(i).len();
            assert!(train == 7390 || train == 7391, "train size {train}");
        }
    }

    #[test]
    fn fold_sizes_seven_class() {
        let m = manifest_labeled(&post_qc_counts());
        let plan = make_folds(&m, 5, 9).unwrap();
        let mut sizes: Vec<usize> = (0..5).map(|i| plan.fold_test_ids(i).len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, [1847, 1847, 1848, 1848, 1848]);
    }

    #[test]
    fn folds_partition_universe() {
        let m = manifest_labeled(&[(BaseClass::Mel, 13), (BaseClass::Nv, 22)]);
        let plan = make_folds(&m, 5, 1).unwrap();
        let universe: HashSet<String> = m.records.iter().map(|r| r.image_id.clone()).collect();
        let parts: Vec<&[String]> = (0..5).map(|i| plan.fold_test_ids(i)).collect();
        assert_partition(parts, &universe);
        // per-class per-fold counts within 1
        for class in ["mel", "nv"] {
            let counts: Vec<usize> = (0..5)
                .map(|i| plan.fold_test_ids(i).iter().filter(|id| id.starts_with(class)).count())
                .collect();
            let min = counts.iter().min().unwrap();
            let max = counts.iter().max().unwrap();
            assert!(max - min <= 1, "class {class}: {counts:?}");
        }
    }

    #[test]
    fn two_folds_on_four_records() {
        let m = manifest_labeled(&[(BaseClass::Df, 4)]);
        let plan = make_folds(&m, 2, 0).unwrap();
        assert_eq!(plan.fold_test_ids(0).len(), 2);
        assert_eq!(plan.fold_test_ids(1).len(), 2);
    }

    #[test]
    fn too_many_folds_is_hard_failure() {
        let m = manifest_labeled(&[(BaseClass::Df, 4)]);
        assert!(matches!(make_folds(&m, 5, 0), Err(CoreError::TooManyFolds { .. })));
        assert!(matches!(make_folds(&m, 1, 0), Err(CoreError::BadFoldCount(1))));
    }

    #[test]
    fn plan_serialization_is_sorted_and_stable() {
        let m = manifest_labeled(&[(BaseClass::Mel, 7), (BaseClass::Nv, 5)]);
        let plan = make_holdout_split(&m, [0.6, 0.2, 0.2], 5).unwrap();
        for ids in plan.partitions.values() {
            let mut sorted = ids.clone();
            sorted.sort();
            assert_eq!(&sorted, ids);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.json");
        plan.save(&path).unwrap();
        let a = std::fs::read(&path).unwrap();
        plan.save(&path).unwrap();
        assert_eq!(a, std::fs::read(&path).unwrap());
        assert_eq!(SplitPlan::load(&path).unwrap(), plan);
    }
}
