//! End-to-end drivers: named result-table reproductions and the synthetic
//! dry run that exercises every stage in minutes on CPU.

use std::path::Path;

use crate::config::{ClassifierOverrides, DataConfig, PipelineConfig, SplitConfig};
use crate::error::{CliError, Result};
use crate::stages::{self, Layout};
use crate::synthetic::generate_fixture;
use dermpipe_core::report::TaskReport;
use dermpipe_core::{Source, TaskId};
use dermpipe_nn::{SegmenterConfig, TrainSchedule};

/// Reproduction targets, named after the result tables of the experiment
/// protocol this pipeline implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReproTarget {
    /// Segmentation-source holdout split sizes.
    Table1,
    /// Per-class QC removal counts.
    Table4,
    /// Binary-task 5-fold accuracy / sensitivity / specificity / AUC.
    Table9,
    /// Seven-class per-class AUC plus micro/macro.
    Table10,
    /// Seven-class micro/macro precision, F1 and AUC.
    Table11,
}

impl std::str::FromStr for ReproTarget {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "table1" => Ok(ReproTarget::Table1),
            "table4" => Ok(ReproTarget::Table4),
            "table9" => Ok(ReproTarget::Table9),
            "table10" => Ok(ReproTarget::Table10),
            "table11" => Ok(ReproTarget::Table11),
            other => Err(CliError::Config(format!(
                "unknown reproduction target `{other}` (expected table1, table4, table9, table10 or table11)"
            ))),
        }
    }
}

fn load_report(config: &PipelineConfig, task: TaskId) -> Result<TaskReport> {
    let path = Layout::new(&config.out_root).report_dir(task).join("report.json");
    let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn run_classification_task(config: &PipelineConfig, task: TaskId, force: bool) -> Result<TaskReport> {
    let mut cfg = config.clone();
    cfg.task = Some(task);
    stages::cmd_split(&cfg, force)?;
    stages::cmd_preprocess(&cfg, force)?;
    stages::cmd_train_clf(&cfg, force, 1)?;
    stages::cmd_evaluate(&cfg, force)?;
    load_report(&cfg, task)
}

/// Drive the stages needed for one reproduction target.
pub fn cmd_reproduce(config: &PipelineConfig, target: ReproTarget, force: bool) -> Result<()> {
    match target {
        ReproTarget::Table1 => {
            let mut cfg = config.clone();
            cfg.task = None;
            cfg.split.ratios = [0.70, 0.10, 0.20];
            stages::cmd_ingest(&cfg, force)?;
            let plan_path = stages::cmd_split(&cfg, force)?;
            let plan = dermpipe_core::SplitPlan::load(&plan_path)?;
            let [train, val, test] = plan.sizes();
            println!("category  training  validation  test");
            println!("1         {train:>8}  {val:>10}  {test:>4}");
        }
        ReproTarget::Table4 => {
            let mut cfg = config.clone();
            cfg.task = None;
            stages::cmd_ingest(&cfg, force)?;
            stages::cmd_segment(&cfg, force)?;
            let path = Layout::new(&cfg.out_root).qc_summary();
            let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            let summary: dermpipe_nn::QcSummary = serde_json::from_slice(&bytes)?;
            stages::print_qc_summary(&summary);
        }
        ReproTarget::Table9 => {
            let tasks: Vec<TaskId> = match config.task {
                Some(t) if t.is_binary() => vec![t],
                _ => vec![
                    TaskId::MelanocyticVsNon,
                    TaskId::MelVsNv,
                    TaskId::BenignVsMalignant,
                    TaskId::CancerVsNoncancer,
                ],
            };
            println!("task                     accuracy           sensitivity        specificity        auc");
            for task in tasks {
                let report = run_classification_task(config, task, force)?;
                let cell = |name: &str| -> String {
                    report
                        .metrics
                        .get(name)
                        .map(|a| match a.std {
                            Some(s) => format!("{:.2} ± {:.2}", 100.0 * a.mean, 100.0 * s),
                            None => format!("{:.2}", 100.0 * a.mean),
                        })
                        .unwrap_or_else(|| "-".into())
                };
                println!(
                    "{:<24} {:<18} {:<18} {:<18} {}",
                    task.name(),
                    cell("accuracy"),
                    cell("sensitivity"),
                    cell("specificity"),
                    cell("auc"),
                );
            }
        }
        ReproTarget::Table10 => {
            let report = run_classification_task(config, TaskId::SevenClass, force)?;
            println!("class    auc");
            for (class, summary) in &report.per_class {
                match summary.auc {
                    Some(auc) => println!("{class:<8} {:.2}", 100.0 * auc),
                    None => println!("{class:<8} -"),
                }
            }
            for name in ["auc_micro", "auc_macro"] {
                if let Some(agg) = report.metrics.get(name) {
                    println!("{name:<8} {:.2}", 100.0 * agg.mean);
                }
            }
        }
        ReproTarget::Table11 => {
            let report = run_classification_task(config, TaskId::SevenClass, force)?;
            let cell = |name: &str| -> String {
                report
                    .metrics
                    .get(name)
                    .map(|a| format!("{:.2}", 100.0 * a.mean))
                    .unwrap_or_else(|| "-".into())
            };
            println!("precision (micro - macro)  f1 (micro - macro)  auc (micro - macro)");
            println!(
                "{} - {}              {} - {}        {} - {}",
                cell("precision_micro"),
                cell("precision_macro"),
                cell("f1_micro"),
                cell("f1_macro"),
                cell("auc_micro"),
                cell("auc_macro"),
            );
        }
    }
    Ok(())
}

/// Configuration used by the dry run: reduced models sized to finish the
/// whole pipeline on CPU in a few minutes.
fn dry_run_config(out_root: &Path, fixture_root: &Path, metadata: &Path, source: Source) -> PipelineConfig {
    PipelineConfig {
        out_root: out_root.to_path_buf(),
        task: None,
        data: DataConfig {
            root: Some(fixture_root.to_path_buf()),
            metadata: Some(metadata.to_path_buf()),
            source: Some(source),
        },
        split: SplitConfig { ratios: [0.70, 0.15, 0.15], k: 2 },
        segmenter: SegmenterConfig::reduced(32),
        seg_schedule: TrainSchedule {
            max_epochs: 40,
            batch_size: 8,
            initial_lr: 1e-3,
            plateau_patience: 8,
            plateau_factor: 0.01,
        },
        classifier: ClassifierOverrides {
            backbone: Some("reduced".into()),
            input_size: Some(32),
            epochs: Some(12),
            batch_size: Some(8),
            learning_rate: Some(1e-3),
            random_init: Some(true),
            val_fraction: Some(0.25),
            ..ClassifierOverrides::default()
        },
        ..PipelineConfig::default()
    }
}

/// Exercise every stage on a bundled synthetic fixture.
pub fn cmd_dry_run(out: &Path, force: bool) -> Result<()> {
    let started = std::time::Instant::now();
    let fixture_dir = out.join("fixture");
    println!("== generating synthetic fixture ==");
    let fixture = generate_fixture(&fixture_dir, 32, 96, 5)?;

    let run_root = out.join("run");
    let seg_cfg = dry_run_config(&run_root, &fixture.root, &fixture.isic_metadata, Source::Isic2018);

    println!("== ingest (segmentation source) ==");
    stages::cmd_ingest(&seg_cfg, force)?;
    println!("== split (segmentation source) ==");
    stages::cmd_split(&seg_cfg, force)?;
    println!("== train-seg ==");
    stages::cmd_train_seg(&seg_cfg, force)?;

    let mut clf_cfg = dry_run_config(&run_root, &fixture.root, &fixture.ham_metadata, Source::Ham10000);
    println!("== ingest (classification source) ==");
    stages::cmd_ingest(&clf_cfg, force)?;
    println!("== segment + qc ==");
    stages::cmd_segment(&clf_cfg, force)?;

    clf_cfg.task = Some(TaskId::CancerVsNoncancer);
    println!("== split (task folds) ==");
    stages::cmd_split(&clf_cfg, force)?;
    println!("== preprocess ==");
    stages::cmd_preprocess(&clf_cfg, force)?;
    println!("== train-clf ==");
    stages::cmd_train_clf(&clf_cfg, force, 1)?;
    println!("== evaluate ==");
    stages::cmd_evaluate(&clf_cfg, force)?;

    println!("dry run complete in {:.1}s; outputs under {}", started.elapsed().as_secs_f64(), run_root.display());
    Ok(())
}
