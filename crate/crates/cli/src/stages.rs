//! Pipeline stages. Each stage validates its inputs, stamps its outputs with
//! the digest of the configuration that produced them, and skips itself on a
//! rerun with an unchanged digest unless forced.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use dermpipe_core::dataset::DatasetManifest;
use dermpipe_core::digest::{bytes_digest, config_digest};
use dermpipe_core::mask::BinaryMask;
use dermpipe_core::preprocess::{crop_and_resize, mask_digest, RgbPlanes};
use dermpipe_core::report::{PerClassSummary, TaskReport};
use dermpipe_core::{
    aggregate_folds, apply_grouping, binary_metrics, confusion_matrix, dilate, load_manifest,
    make_folds, make_holdout_split, multiclass_metrics, render_report, roc_auc, roc_curve,
    FoldPlan, Source, SplitPlan, TaskId,
};
use dermpipe_nn::{
    accepted_only, clf_sample_from_crop, decide_label, evaluate_segmenter, load_clf_checkpoint,
    load_seg_checkpoint, load_seg_samples, predict_proba, run_mask_stage, train_classifier,
    train_segmenter, ClfSample,
};

/// Canonical output locations under the run root.
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout { root: root.to_path_buf() }
    }

    pub fn manifest(&self, source: Source) -> PathBuf {
        self.root.join("manifests").join(format!("{}.json", source_name(source)))
    }

    pub fn masked_manifest(&self, source: Source) -> PathBuf {
        self.root.join("manifests").join(format!("{}_masked.json", source_name(source)))
    }

    pub fn accepted_manifest(&self, source: Source) -> PathBuf {
        self.root.join("manifests").join(format!("{}_accepted.json", source_name(source)))
    }

    pub fn seg_split_plan(&self) -> PathBuf {
        self.root.join("plans").join("segmentation_split.json")
    }

    pub fn split_plan(&self, task: TaskId) -> PathBuf {
        self.root.join("plans").join(format!("{task}_split.json"))
    }

    pub fn fold_plan(&self, task: TaskId) -> PathBuf {
        self.root.join("plans").join(format!("{task}_folds.json"))
    }

    pub fn seg_dir(&self) -> PathBuf {
        self.root.join("seg")
    }

    pub fn seg_checkpoint_base(&self) -> PathBuf {
        self.seg_dir().join("segmenter")
    }

    pub fn masks_dir(&self) -> PathBuf {
        self.root.join("masks")
    }

    pub fn qc_summary(&self) -> PathBuf {
        self.root.join("qc_summary.json")
    }

    pub fn preprocess_dir(&self, task: TaskId) -> PathBuf {
        self.root.join("preprocessed").join(task.name())
    }

    pub fn crop_cache(&self, task: TaskId) -> PathBuf {
        self.preprocess_dir(task).join("cache.json")
    }

    pub fn run_dir(&self, task: TaskId, fold: Option<usize>) -> PathBuf {
        let leaf = match fold {
            Some(i) => format!("fold{i}"),
            None => "holdout".to_string(),
        };
        self.root.join("runs").join(task.name()).join(leaf)
    }

    pub fn report_dir(&self, task: TaskId) -> PathBuf {
        self.root.join("reports").join(task.name())
    }
}

fn source_name(source: Source) -> &'static str {
    match source {
        Source::Isic2018 => "isic2018",
        Source::Ham10000 => "ham10000",
        Source::Custom => "custom",
    }
}

#[derive(Serialize, Deserialize)]
struct StageStamp {
    stage: String,
    digest: String,
}

fn stamp_path(dir: &Path, stage: &str) -> PathBuf {
    dir.join(format!("{stage}.stage.json"))
}

/// True when the stage already ran with this digest and may be skipped.
fn stage_cached(dir: &Path, stage: &str, digest: &str, force: bool) -> bool {
    if force {
        return false;
    }
    let Ok(bytes) = std::fs::read(stamp_path(dir, stage)) else {
        return false;
    };
    matches!(serde_json::from_slice::<StageStamp>(&bytes), Ok(s) if s.digest == digest)
}

fn stage_commit(dir: &Path, stage: &str, digest: &str) -> Result<()> {
    let stamp = StageStamp { stage: stage.to_string(), digest: digest.to_string() };
    dermpipe_core::fsutil::write_atomic(&stamp_path(dir, stage), &serde_json::to_vec_pretty(&stamp)?)?;
    Ok(())
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(bytes_digest(&bytes))
}

fn require_file(path: &Path, producer: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingPrecondition(format!(
            "missing `{}`; run `dermpipe {producer}` first",
            path.display()
        )))
    }
}

fn load_manifest_file(path: &Path, producer: &str) -> Result<DatasetManifest> {
    require_file(path, producer)?;
    Ok(DatasetManifest::load(path)?)
}

/// Ingest the configured dataset into a manifest file.
pub fn cmd_ingest(config: &PipelineConfig, force: bool) -> Result<PathBuf> {
    let (root, metadata, source) = config.require_data()?;
    let layout = Layout::new(&config.out_root);
    let out = layout.manifest(source);
    let digest = config_digest(&("ingest", root, metadata, source_name(source), file_digest(metadata)?));
    if stage_cached(&config.out_root, &format!("ingest_{}", source_name(source)), &digest, force) {
        println!("ingest: cache hit for {} (use --force to redo)", out.display());
        return Ok(out);
    }

    let manifest = load_manifest(root, metadata, source)?;
    manifest.save(&out)?;
    config.write_effective()?;

    println!("ingested {} records from {}", manifest.record_count, source_name(source));
    let counts = manifest.class_counts();
    if !counts.is_empty() {
        for (class, n) in &counts {
            println!("  {class}: {n}");
        }
    }
    stage_commit(&config.out_root, &format!("ingest_{}", source_name(source)), &digest)?;
    Ok(out)
}

/// Freeze split/fold plans.
///
/// Without a task this splits the segmentation source by the configured
/// ratios. With a task, binary groupings get a k-fold plan and the
/// seven-class grouping a train/val/test split, both over the QC-accepted
/// manifest.
pub fn cmd_split(config: &PipelineConfig, force: bool) -> Result<PathBuf> {
    let layout = Layout::new(&config.out_root);
    match config.task {
        None => {
            let source = config.data.source.unwrap_or(Source::Isic2018);
            let manifest_path = layout.manifest(source);
            let manifest = load_manifest_file(&manifest_path, "ingest")?;
            let digest = config_digest(&(
                "split_seg",
                config.split.ratios,
                config.seeds.split,
                file_digest(&manifest_path)?,
            ));
            let out = layout.seg_split_plan();
            if stage_cached(&config.out_root, "split_seg", &digest, force) {
                println!("split: cache hit for {}", out.display());
                return Ok(out);
            }
            let plan = make_holdout_split(&manifest, config.split.ratios, config.seeds.split)?;
            plan.save(&out)?;
            let [train, val, test] = plan.sizes();
            println!("segmentation split: train {train} / val {val} / test {test}");
            stage_commit(&config.out_root, "split_seg", &digest)?;
            Ok(out)
        }
        Some(task) => {
            let source = config.data.source.unwrap_or(Source::Ham10000);
            let accepted_path = layout.accepted_manifest(source);
            let manifest = load_manifest_file(&accepted_path, "segment")?;
            let grouped = apply_grouping(&manifest, task)?;
            let stage = format!("split_{task}");
            let digest = config_digest(&(
                "split_task",
                task,
                config.split.ratios,
                config.split.k,
                config.seeds.split,
                file_digest(&accepted_path)?,
            ));
            let out = if task.is_binary() { layout.fold_plan(task) } else { layout.split_plan(task) };
            if stage_cached(&config.out_root, &stage, &digest, force) {
                println!("split: cache hit for {}", out.display());
                return Ok(out);
            }
            if task.is_binary() {
                let plan = make_folds(&grouped, config.split.k, config.seeds.split)?;
                plan.save(&out)?;
                let sizes: Vec<usize> =
                    (0..config.split.k).map(|i| plan.fold_test_ids(i).len()).collect();
                println!("{task}: {}-fold plan, test sizes {sizes:?}", config.split.k);
            } else {
                let plan = make_holdout_split(&grouped, config.split.ratios, config.seeds.split)?;
                plan.save(&out)?;
                let [train, val, test] = plan.sizes();
                println!("{task}: split train {train} / val {val} / test {test}");
            }
            stage_commit(&config.out_root, &stage, &digest)?;
            Ok(out)
        }
    }
}

/// Train the segmenter on the segmentation source's frozen split.
pub fn cmd_train_seg(config: &PipelineConfig, force: bool) -> Result<PathBuf> {
    let layout = Layout::new(&config.out_root);
    let source = config.data.source.unwrap_or(Source::Isic2018);
    let manifest_path = layout.manifest(source);
    let plan_path = layout.seg_split_plan();
    let manifest = load_manifest_file(&manifest_path, "ingest")?;
    require_file(&plan_path, "split")?;
    let plan = SplitPlan::load(&plan_path)?;

    let digest = config_digest(&(
        "train_seg",
        &config.segmenter,
        &config.seg_schedule,
        config.seeds.segmenter,
        file_digest(&manifest_path)?,
        file_digest(&plan_path)?,
    ));
    let base = layout.seg_checkpoint_base();
    if stage_cached(&config.out_root, "train_seg", &digest, force) {
        println!("train-seg: cache hit for {}", base.display());
        return Ok(base);
    }

    let by_id: BTreeMap<&str, &dermpipe_core::ImageRecord> =
        manifest.records.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let records_of = |ids: &[String]| -> Vec<dermpipe_core::ImageRecord> {
        ids.iter().filter_map(|id| by_id.get(id.as_str()).map(|r| (*r).clone())).collect()
    };
    let train_records = records_of(plan.part("train"));
    let val_records = records_of(plan.part("val"));
    let test_records = records_of(plan.part("test"));

    println!(
        "loading {} train / {} val / {} test images at {}x{}",
        train_records.len(),
        val_records.len(),
        test_records.len(),
        config.segmenter.width,
        config.segmenter.height
    );
    let train = load_seg_samples(&train_records, &config.segmenter)?;
    let val = load_seg_samples(&val_records, &config.segmenter)?;

    let seg_dir = layout.seg_dir();
    let (record, history) = train_segmenter(
        &train,
        &val,
        &config.segmenter,
        &config.seg_schedule,
        config.seeds.segmenter,
        &seg_dir,
    )?;
    println!(
        "best validation pixel accuracy {:.4} at epoch {} ({} epochs run)",
        record.monitored_value,
        record.epoch,
        history.epochs.len()
    );

    if !test_records.is_empty() {
        let test = load_seg_samples(&test_records, &config.segmenter)?;
        let (model, _) = load_seg_checkpoint(&base)?;
        let report = evaluate_segmenter(&model, &config.segmenter, &test)?;
        println!(
            "test: pixel accuracy {:.4}, dice {:.4}, iou {:.4} over {} images",
            report.pixel_accuracy, report.dice, report.iou, report.n_images
        );
        dermpipe_core::fsutil::write_atomic(
            &seg_dir.join("seg_eval.json"),
            &serde_json::to_vec_pretty(&report)?,
        )?;
    }
    config.write_effective()?;
    stage_commit(&config.out_root, "train_seg", &digest)?;
    Ok(base)
}

/// Generate masks for the classification source and apply QC.
pub fn cmd_segment(config: &PipelineConfig, force: bool) -> Result<PathBuf> {
    let layout = Layout::new(&config.out_root);
    let source = config.data.source.unwrap_or(Source::Ham10000);
    let manifest_path = layout.manifest(source);
    let manifest = load_manifest_file(&manifest_path, "ingest")?;
    let base = layout.seg_checkpoint_base();
    require_file(&base.with_extension("json"), "train-seg")?;

    let digest = config_digest(&(
        "segment",
        &config.qc,
        file_digest(&manifest_path)?,
        file_digest(&base.with_extension("json"))?,
    ));
    let out = layout.accepted_manifest(source);
    if stage_cached(&config.out_root, "segment", &digest, force) {
        println!("segment: cache hit for {}", out.display());
        return Ok(out);
    }

    let (model, sidecar) = load_seg_checkpoint(&base)?;
    let (masked, summary) =
        run_mask_stage(&manifest, &model, &sidecar.config, &config.qc, &layout.masks_dir())?;
    masked.save(&layout.masked_manifest(source))?;
    let accepted = accepted_only(&masked);
    accepted.save(&out)?;
    dermpipe_core::fsutil::write_atomic(&layout.qc_summary(), &serde_json::to_vec_pretty(&summary)?)?;
    print_qc_summary(&summary);
    config.write_effective()?;
    stage_commit(&config.out_root, "segment", &digest)?;
    Ok(out)
}

/// Crop-cache entry: one preprocessed image on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CropEntry {
    pub image_id: String,
    pub label: usize,
    pub label_name: String,
    pub path: PathBuf,
    pub mask_digest: String,
    pub bbox: (usize, usize, usize, usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CropCache {
    pub task: TaskId,
    pub crop_size: usize,
    pub manifest_digest: String,
    pub entries: Vec<CropEntry>,
}

impl CropCache {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Build the preprocessed crop cache for a task: dilate each accepted mask,
/// crop to its bounding box, resize, and store losslessly.
pub fn cmd_preprocess(config: &PipelineConfig, force: bool) -> Result<PathBuf> {
    let task = config.require_task()?;
    let layout = Layout::new(&config.out_root);
    let source = config.data.source.unwrap_or(Source::Ham10000);
    let accepted_path = layout.accepted_manifest(source);
    let manifest = load_manifest_file(&accepted_path, "segment")?;
    let grouped = apply_grouping(&manifest, task)?;
    let clf = config.classifier.resolve(task)?;

    let manifest_digest = file_digest(&accepted_path)?;
    let digest = config_digest(&(
        "preprocess",
        task,
        clf.input_size,
        &config.dilation,
        &manifest_digest,
    ));
    let cache_path = layout.crop_cache(task);
    if stage_cached(&config.out_root, &format!("preprocess_{task}"), &digest, force) {
        println!("preprocess: cache hit for {}", cache_path.display());
        return Ok(cache_path);
    }

    let dir = layout.preprocess_dir(task);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let grouping = task.grouping();
    let mut entries = Vec::with_capacity(grouped.records.len());
    for record in &grouped.records {
        let mask_path = record.mask_path.as_ref().ok_or_else(|| {
            CliError::MissingPrecondition(format!(
                "record `{}` has no mask; run `dermpipe segment` first",
                record.image_id
            ))
        })?;
        let image = RgbPlanes::load(&record.image_path)?;
        let mask = BinaryMask::load_png(mask_path)?;
        let dilated = dilate(&mask, config.dilation.radius, config.dilation.iterations);
        let crop = crop_and_resize(&image, &dilated, clf.input_size)?;
        let out = dir.join(format!("{}.png", record.image_id));
        crop.save_png(&out)?;
        let label = record.task_label.expect("grouped manifest carries labels");
        entries.push(CropEntry {
            image_id: record.image_id.clone(),
            label,
            label_name: grouping.labels[label].to_string(),
            path: out,
            mask_digest: mask_digest(&dilated),
            bbox: dilated.bbox().expect("accepted masks are non-empty"),
        });
    }
    let cache = CropCache { task, crop_size: clf.input_size, manifest_digest, entries };
    dermpipe_core::fsutil::write_atomic(&cache_path, &serde_json::to_vec_pretty(&cache)?)?;
    println!("cached {} crops at {}px under {}", cache.entries.len(), clf.input_size, dir.display());
    config.write_effective()?;
    stage_commit(&config.out_root, &format!("preprocess_{task}"), &digest)?;
    Ok(cache_path)
}

fn load_clf_samples(entries: &[&CropEntry], size: usize) -> Result<Vec<ClfSample>> {
    entries
        .iter()
        .map(|e| Ok(clf_sample_from_crop(&e.image_id, &e.path, e.label, size)?))
        .collect()
}

/// Look up plan ids in the crop cache; a missing id means the cache is stale
/// relative to the plan.
fn entries_of_strict<'a>(
    by_id: &BTreeMap<&str, &'a CropEntry>,
    ids: &[String],
) -> Result<Vec<&'a CropEntry>> {
    let mut out = Vec::with_capacity(ids.len());
    let mut missing = 0usize;
    for id in ids {
        match by_id.get(id.as_str()) {
            Some(e) => out.push(*e),
            None => missing += 1,
        }
    }
    if missing > 0 {
        return Err(CliError::MissingPrecondition(format!(
            "{missing} plan id(s) absent from the crop cache; rerun `dermpipe preprocess` (and `dermpipe split` if the manifest changed)"
        )));
    }
    Ok(out)
}

/// Deterministic stratified inner split of training entries for checkpoint
/// selection. Falls back to validating on the training set itself when the
/// validation share rounds to nothing.
fn inner_split(
    entries: Vec<&CropEntry>,
    frac: f64,
    seed: u64,
) -> (Vec<&CropEntry>, Vec<&CropEntry>) {
    use dermpipe_core::dataset::{ImageRecord, QcStatus};
    let records = entries
        .iter()
        .map(|e| ImageRecord {
            image_id: e.image_id.clone(),
            image_path: e.path.clone(),
            mask_path: None,
            base_class: None,
            task_label: Some(e.label),
            qc_status: QcStatus::Accepted,
        })
        .collect();
    let mini = DatasetManifest::new(Source::Custom, records);
    let plan = make_holdout_split(&mini, [1.0 - frac, frac, 0.0], seed)
        .expect("inner split fractions are valid");
    let val_ids: std::collections::BTreeSet<&str> =
        plan.part("val").iter().map(|s| s.as_str()).collect();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for e in entries {
        if val_ids.contains(e.image_id.as_str()) {
            val.push(e);
        } else {
            train.push(e);
        }
    }
    if val.is_empty() {
        eprintln!("warning: validation share too small, selecting on training accuracy");
        val = train.clone();
    }
    (train, val)
}

/// Train classifier model(s): one per fold for binary tasks, one holdout
/// model for the seven-class task.
pub fn cmd_train_clf(config: &PipelineConfig, force: bool, parallel_folds: usize) -> Result<Vec<PathBuf>> {
    let task = config.require_task()?;
    let layout = Layout::new(&config.out_root);
    let cache_path = layout.crop_cache(task);
    require_file(&cache_path, "preprocess")?;
    let cache = CropCache::load(&cache_path)?;
    let clf = config.classifier.resolve(task)?;

    let stage = format!("train_clf_{task}");
    let digest = config_digest(&(
        "train_clf",
        task,
        &clf,
        config.seeds.classifier,
        file_digest(&cache_path)?,
    ));

    let by_id: BTreeMap<&str, &CropEntry> =
        cache.entries.iter().map(|e| (e.image_id.as_str(), e)).collect();

    if task.is_binary() {
        let plan_path = layout.fold_plan(task);
        require_file(&plan_path, "split")?;
        let plan = FoldPlan::load(&plan_path)?;
        if stage_cached(&config.out_root, &stage, &digest, force) {
            println!("train-clf: cache hit for {task}");
            return Ok((0..plan.k).map(|i| layout.run_dir(task, Some(i))).collect());
        }

        let folds: Vec<usize> = (0..plan.k).collect();
        let jobs: Vec<(usize, Vec<&CropEntry>)> = folds
            .iter()
            .map(|&i| Ok((i, entries_of_strict(&by_id, &plan.fold_train_ids(i))?)))
            .collect::<Result<_>>()?;

        let run_fold = |fold: usize, train_entries: &[&CropEntry]| -> Result<PathBuf> {
            let (train_e, val_e) = inner_split(
                train_entries.to_vec(),
                clf.val_fraction,
                config.seeds.classifier ^ fold as u64,
            );
            let train = load_clf_samples(&train_e, clf.input_size)?;
            let val = load_clf_samples(&val_e, clf.input_size)?;
            let dir = layout.run_dir(task, Some(fold));
            let (sidecar, history) = train_classifier(
                &train,
                &val,
                &clf,
                task,
                Some(fold),
                config.seeds.classifier.wrapping_add(fold as u64),
                &dir,
            )?;
            println!(
                "fold {fold}: best val accuracy {:.4} at epoch {} ({} train / {} val)",
                sidecar.best_val_metric,
                sidecar.epoch,
                train.len(),
                val.len()
            );
            let _ = history;
            Ok(dir)
        };

        let mut dirs = vec![PathBuf::new(); plan.k];
        if parallel_folds <= 1 {
            for (fold, entries) in &jobs {
                dirs[*fold] = run_fold(*fold, entries)?;
            }
        } else {
            // independent jobs; training determinism is per-process, so
            // parallel runs trade reproducibility for wall-clock time
            let results: Vec<(usize, Result<PathBuf>)> = std::thread::scope(|scope| {
                let mut handles = Vec::new();
                for chunk in jobs.chunks(parallel_folds) {
                    let spawned: Vec<_> = chunk
                        .iter()
                        .map(|(fold, entries)| {
                            let run_fold = &run_fold;
                            scope.spawn(move || (*fold, run_fold(*fold, entries)))
                        })
                        .collect();
                    for h in spawned {
                        handles.push(h.join().expect("fold worker panicked"));
                    }
                }
                handles
            });
            for (fold, result) in results {
                dirs[fold] = result?;
            }
        }
        config.write_effective()?;
        stage_commit(&config.out_root, &stage, &digest)?;
        Ok(dirs)
    } else {
        let plan_path = layout.split_plan(task);
        require_file(&plan_path, "split")?;
        let plan = SplitPlan::load(&plan_path)?;
        let dir = layout.run_dir(task, None);
        if stage_cached(&config.out_root, &stage, &digest, force) {
            println!("train-clf: cache hit for {task}");
            return Ok(vec![dir]);
        }
        let train =
            load_clf_samples(&entries_of_strict(&by_id, plan.part("train"))?, clf.input_size)?;
        let val_entries = entries_of_strict(&by_id, plan.part("val"))?;
        let val = if val_entries.is_empty() {
            eprintln!("warning: empty validation partition, selecting on training accuracy");
            train.clone()
        } else {
            load_clf_samples(&val_entries, clf.input_size)?
        };
        let (sidecar, _history) = train_classifier(
            &train,
            &val,
            &clf,
            task,
            None,
            config.seeds.classifier,
            &dir,
        )?;
        println!(
            "{task}: best val accuracy {:.4} at epoch {}",
            sidecar.best_val_metric, sidecar.epoch
        );
        config.write_effective()?;
        stage_commit(&config.out_root, &stage, &digest)?;
        Ok(vec![dir])
    }
}

fn prediction_csv(
    path: &Path,
    labels: &[&str],
    rows: &[(String, usize, usize, Vec<f64>)],
    score_names: &[String],
) -> Result<()> {
    let mut text = String::from("image_id,true_label,pred_label");
    for name in score_names {
        text.push_str(&format!(",score_{name}"));
    }
    text.push('\n');
    for (id, true_l, pred_l, scores) in rows {
        text.push_str(&format!("{id},{},{}", labels[*true_l], labels[*pred_l]));
        for s in scores {
            text.push_str(&format!(",{s}"));
        }
        text.push('\n');
    }
    dermpipe_core::fsutil::write_atomic(path, text.as_bytes())?;
    Ok(())
}

/// Evaluate trained models on their frozen test partitions and render the
/// metric report with plots.
pub fn cmd_evaluate(config: &PipelineConfig, force: bool) -> Result<PathBuf> {
    let task = config.require_task()?;
    let layout = Layout::new(&config.out_root);
    let cache_path = layout.crop_cache(task);
    require_file(&cache_path, "preprocess")?;
    let cache = CropCache::load(&cache_path)?;
    let grouping = task.grouping();
    let labels: Vec<&str> = grouping.labels.clone();

    let by_id: BTreeMap<&str, &CropEntry> =
        cache.entries.iter().map(|e| (e.image_id.as_str(), e)).collect();
    let report_dir = layout.report_dir(task);

    if task.is_binary() {
        let plan_path = layout.fold_plan(task);
        require_file(&plan_path, "split")?;
        let plan = FoldPlan::load(&plan_path)?;

        let mut fold_digests = Vec::new();
        for fold in 0..plan.k {
            let sidecar = layout.run_dir(task, Some(fold)).join("classifier.json");
            require_file(&sidecar, "train-clf")?;
            fold_digests.push(file_digest(&sidecar)?);
        }
        let digest = config_digest(&("evaluate", task, file_digest(&cache_path)?, fold_digests));
        let stage = format!("evaluate_{task}");
        if stage_cached(&config.out_root, &stage, &digest, force) {
            println!("evaluate: cache hit for {}", report_dir.display());
            return Ok(report_dir);
        }

        let positive = grouping.positive_label().expect("binary task");
        let mut per_fold: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        let mut pooled_truth: Vec<bool> = Vec::new();
        let mut pooled_scores: Vec<f64> = Vec::new();
        let mut pooled_true_names: Vec<&str> = Vec::new();
        let mut pooled_pred_names: Vec<&str> = Vec::new();

        for fold in 0..plan.k {
            let dir = layout.run_dir(task, Some(fold));
            let (model, sidecar) = load_clf_checkpoint(&dir.join("classifier"))?;
            let entries = entries_of_strict(&by_id, plan.fold_test_ids(fold))?;
            let samples = load_clf_samples(&entries, sidecar.config.input_size)?;
            let crops: Vec<Vec<f32>> = samples.iter().map(|s| s.pixels.clone()).collect();
            let probs = predict_proba(&model, &sidecar.config, &crops)?;

            let mut rows = Vec::with_capacity(samples.len());
            let mut truth = Vec::with_capacity(samples.len());
            let mut scores = Vec::with_capacity(samples.len());
            let mut true_names = Vec::new();
            let mut pred_names = Vec::new();
            for (sample, p) in samples.iter().zip(probs.iter()) {
                let pred = decide_label(p, 0.5);
                rows.push((sample.id.clone(), sample.label, pred, p.clone()));
                truth.push(sample.label == 0);
                scores.push(p[0]);
                true_names.push(labels[sample.label]);
                pred_names.push(labels[pred]);
            }
            prediction_csv(
                &dir.join("predictions.csv"),
                &labels,
                &rows,
                &[positive.to_string()],
            )?;

            let cm = confusion_matrix(&true_names, &pred_names, &labels)?;
            let mut metrics = binary_metrics(&cm, positive)?;
            metrics.auc = roc_auc(&truth, &scores).ok();
            for (name, value) in [
                ("accuracy", metrics.accuracy),
                ("sensitivity", metrics.sensitivity),
                ("specificity", metrics.specificity),
                ("auc", metrics.auc),
            ] {
                if let Some(v) = value {
                    per_fold.entry(name).or_default().push(v);
                }
            }
            pooled_truth.extend(&truth);
            pooled_scores.extend(&scores);
            pooled_true_names.extend(true_names);
            pooled_pred_names.extend(pred_names);
        }

        let mut metrics = BTreeMap::new();
        for (name, values) in &per_fold {
            metrics.insert(name.to_string(), aggregate_folds(name, values)?);
        }
        let pooled_cm = confusion_matrix(&pooled_true_names, &pooled_pred_names, &labels)?;
        let mut roc_curves = BTreeMap::new();
        roc_curves.insert(positive.to_string(), roc_curve(&pooled_truth, &pooled_scores));

        let mut per_class = BTreeMap::new();
        for (i, label) in labels.iter().enumerate() {
            let tp = pooled_cm.counts[i][i] as f64;
            let row_sum: u64 = pooled_cm.row_sum(i);
            per_class.insert(
                label.to_string(),
                PerClassSummary {
                    recall: (row_sum > 0).then(|| tp / row_sum as f64),
                    ..PerClassSummary::default()
                },
            );
        }

        let report = TaskReport {
            task: task.name().to_string(),
            folds: plan.k,
            metrics,
            confusion_matrix: Some(pooled_cm),
            per_class,
            roc_curves,
        };
        render_report(&report, &report_dir)?;
        print_fold_table(&report);
        stage_commit(&config.out_root, &stage, &digest)?;
        Ok(report_dir)
    } else {
        let plan_path = layout.split_plan(task);
        require_file(&plan_path, "split")?;
        let plan = SplitPlan::load(&plan_path)?;
        let dir = layout.run_dir(task, None);
        let sidecar_path = dir.join("classifier.json");
        require_file(&sidecar_path, "train-clf")?;
        let digest = config_digest(&(
            "evaluate",
            task,
            file_digest(&cache_path)?,
            file_digest(&sidecar_path)?,
        ));
        let stage = format!("evaluate_{task}");
        if stage_cached(&config.out_root, &stage, &digest, force) {
            println!("evaluate: cache hit for {}", report_dir.display());
            return Ok(report_dir);
        }

        let (model, sidecar) = load_clf_checkpoint(&dir.join("classifier"))?;
        let entries = entries_of_strict(&by_id, plan.part("test"))?;
        let samples = load_clf_samples(&entries, sidecar.config.input_size)?;
        let crops: Vec<Vec<f32>> = samples.iter().map(|s| s.pixels.clone()).collect();
        let probs = predict_proba(&model, &sidecar.config, &crops)?;

        let true_labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
        let rows: Vec<(String, usize, usize, Vec<f64>)> = samples
            .iter()
            .zip(probs.iter())
            .map(|(s, p)| (s.id.clone(), s.label, decide_label(p, 0.5), p.clone()))
            .collect();
        prediction_csv(
            &dir.join("predictions.csv"),
            &labels,
            &rows,
            &labels.iter().map(|l| l.to_string()).collect::<Vec<_>>(),
        )?;

        let mc = multiclass_metrics(&true_labels, &probs, &labels)?;
        for warning in &mc.warnings {
            eprintln!("warning: {warning}");
        }

        let mut metrics = BTreeMap::new();
        for (name, value) in [
            ("accuracy", mc.accuracy),
            ("auc_micro", mc.auc_micro),
            ("auc_macro", mc.auc_macro),
            ("precision_micro", mc.precision_micro),
            ("precision_macro", mc.precision_macro),
            ("f1_micro", mc.f1_micro),
            ("f1_macro", mc.f1_macro),
        ] {
            if let Some(v) = value {
                metrics.insert(name.to_string(), aggregate_folds(name, &[v])?);
            }
        }

        let true_names: Vec<&str> = true_labels.iter().map(|&t| labels[t]).collect();
        let pred_names: Vec<&str> = rows.iter().map(|(_, _, p, _)| labels[*p]).collect();
        let cm = confusion_matrix(&true_names, &pred_names, &labels)?;

        let mut per_class = BTreeMap::new();
        let mut roc_curves = BTreeMap::new();
        for (i, label) in labels.iter().enumerate() {
            per_class.insert(
                label.to_string(),
                PerClassSummary {
                    auc: mc.per_class_auc[*label],
                    precision: mc.per_class_precision[*label],
                    recall: mc.per_class_recall[*label],
                    f1: mc.per_class_f1[*label],
                },
            );
            let truth: Vec<bool> = true_labels.iter().map(|&t| t == i).collect();
            let scores: Vec<f64> = probs.iter().map(|row| row[i]).collect();
            let curve = roc_curve(&truth, &scores);
            if !curve.is_empty() {
                roc_curves.insert(label.to_string(), curve);
            }
        }

        let report = TaskReport {
            task: task.name().to_string(),
            folds: 1,
            metrics,
            confusion_matrix: Some(cm),
            per_class,
            roc_curves,
        };
        render_report(&report, &report_dir)?;
        print_fold_table(&report);
        stage_commit(&config.out_root, &stage, &digest)?;
        Ok(report_dir)
    }
}

pub fn print_qc_summary(summary: &dermpipe_nn::QcSummary) {
    println!("class      before   after  removed  removed%total  removed%class");
    for row in summary.rows.iter().chain(std::iter::once(&summary.total)) {
        println!(
            "{:<10} {:>6}  {:>6}  {:>7}  {:>12.2}  {:>12.2}",
            row.class, row.before, row.after, row.removed, row.removed_share_of_total_pct, row.removed_rate_pct
        );
    }
    if !summary.failed_ids.is_empty() {
        println!("failed records: {}", summary.failed_ids.join(", "));
    }
}

fn print_fold_table(report: &TaskReport) {
    println!("task {} ({} fold{})", report.task, report.folds, if report.folds == 1 { "" } else { "s" });
    for (name, agg) in &report.metrics {
        match agg.std {
            Some(std) => println!("  {name}: {:.2} ± {:.2} %", 100.0 * agg.mean, 100.0 * std),
            None => println!("  {name}: {:.2} %", 100.0 * agg.mean),
        }
    }
    for (class, summary) in &report.per_class {
        if let Some(auc) = summary.auc {
            println!("  auc[{class}]: {:.2} %", 100.0 * auc);
        }
    }
}
