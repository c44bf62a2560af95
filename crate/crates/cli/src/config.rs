//! Run configuration: one hierarchical TOML file per run, overridable by
//! CLI flags. The merged effective configuration is written next to the
//! outputs, and its digest stamps every artifact the run produces.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};
use dermpipe_core::mask::QcPolicy;
use dermpipe_core::{Source, TaskId};
use dermpipe_nn::{BackboneConfig, ClassifierConfig, SegmenterConfig, TrainSchedule};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct DataConfig {
    pub root: Option<PathBuf>,
    pub metadata: Option<PathBuf>,
    pub source: Option<Source>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Seeds {
    pub split: u64,
    pub segmenter: u64,
    pub classifier: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { split: 17, segmenter: 42, classifier: 7 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Train/val/test fractions for holdout splits.
    pub ratios: [f64; 3],
    /// Fold count for cross-validated tasks.
    pub k: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { ratios: [0.70, 0.13, 0.17], k: 5 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DilationConfig {
    pub radius: usize,
    pub iterations: usize,
}

impl Default for DilationConfig {
    fn default() -> Self {
        DilationConfig { radius: 2, iterations: 2 }
    }
}

/// Optional overrides on top of the per-task classifier preset.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct ClassifierOverrides {
    pub backbone: Option<String>,
    pub input_size: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lr_decay: Option<f64>,
    pub fc_units: Option<usize>,
    pub dropout_rate: Option<f64>,
    pub pretrained_weights: Option<PathBuf>,
    pub random_init: Option<bool>,
    pub freeze_backbone: Option<bool>,
    pub augment_flip: Option<bool>,
    pub class_weighting: Option<bool>,
    pub val_fraction: Option<f64>,
}

impl ClassifierOverrides {
    /// Resolve the effective classifier configuration for a task.
    pub fn resolve(&self, task: TaskId) -> Result<ClassifierConfig> {
        let mut cfg = ClassifierConfig::for_task(task);
        match self.backbone.as_deref() {
            None | Some("densenet121") => {}
            Some("reduced") => cfg.backbone = BackboneConfig::reduced(),
            Some(other) => {
                return Err(CliError::Config(format!(
                    "unknown backbone `{other}` (expected `densenet121` or `reduced`)"
                )))
            }
        }
        if let Some(v) = self.input_size {
            cfg.input_size = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.lr_decay {
            cfg.lr_decay = v;
        }
        if let Some(v) = self.fc_units {
            cfg.head.fc_units = v;
        }
        if let Some(v) = self.dropout_rate {
            cfg.head.dropout_rate = v;
        }
        if let Some(v) = &self.pretrained_weights {
            cfg.pretrained_weights = Some(v.clone());
        }
        if let Some(v) = self.random_init {
            cfg.random_init = v;
        }
        if let Some(v) = self.freeze_backbone {
            cfg.freeze_backbone = v;
        }
        if let Some(v) = self.augment_flip {
            cfg.augment_flip = v;
        }
        if let Some(v) = self.class_weighting {
            cfg.class_weighting = v;
        }
        if let Some(v) = self.val_fraction {
            cfg.val_fraction = v;
        }
        Ok(cfg)
    }
}

/// The whole run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub out_root: PathBuf,
    pub task: Option<TaskId>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub segmenter: SegmenterConfig,
    #[serde(default)]
    pub seg_schedule: TrainSchedule,
    #[serde(default)]
    pub classifier: ClassifierOverrides,
    #[serde(default)]
    pub qc: QcPolicy,
    #[serde(default)]
    pub dilation: DilationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            out_root: PathBuf::from("runs/default"),
            task: None,
            data: DataConfig::default(),
            seeds: Seeds::default(),
            split: SplitConfig::default(),
            segmenter: SegmenterConfig::default(),
            seg_schedule: TrainSchedule::default(),
            classifier: ClassifierOverrides::default(),
            qc: QcPolicy::default(),
            dilation: DilationConfig::default(),
        }
    }
}

/// CLI-level overrides applied after the file is read.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub task: Option<TaskId>,
    pub out: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => PipelineConfig::default(),
        };
        if let Some(seed) = overrides.seed {
            config.seeds = Seeds { split: seed, segmenter: seed, classifier: seed };
        }
        if let Some(task) = overrides.task {
            config.task = Some(task);
        }
        if let Some(out) = &overrides.out {
            config.out_root = out.clone();
        }
        Ok(config)
    }

    pub fn digest(&self) -> String {
        dermpipe_core::digest::config_digest(self)
    }

    /// Persist the merged effective configuration next to the outputs.
    pub fn write_effective(&self) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| CliError::Config(format!("serializing effective config: {e}")))?;
        dermpipe_core::fsutil::write_atomic(&self.out_root.join("effective_config.toml"), text.as_bytes())?;
        Ok(())
    }

    pub fn require_task(&self) -> Result<TaskId> {
        self.task.ok_or_else(|| {
            CliError::Config("no task selected; pass --task or set `task` in the config".into())
        })
    }

    pub fn require_data(&self) -> Result<(&Path, &Path, Source)> {
        let root = self.data.root.as_deref().ok_or_else(|| {
            CliError::Config("no dataset root; set [data].root or pass flags".into())
        })?;
        let metadata = self.data.metadata.as_deref().ok_or_else(|| {
            CliError::Config("no metadata file; set [data].metadata".into())
        })?;
        let source = self.data.source.ok_or_else(|| {
            CliError::Config("no data source; set [data].source to isic2018, ham10000 or custom".into())
        })?;
        Ok((root, metadata, source))
    }
}
