//! Best-weight checkpoints: a backend-native weight record plus a JSON
//! sidecar tying the weights to the exact configuration that produced them.
//!
//! Weight writes go through a temp-then-rename so a crash can never leave a
//! half-written checkpoint behind. Loading verifies the sidecar's digest
//! against a fresh hash of the serialized configuration.

use burn::module::Module;
use burn::record::{FullPrecisionSettings, NamedMpkFileRecorder};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::backend::{device, Infer, Train};
use crate::densenet::{build_classifier, ClassifierConfig, DenseNetClassifier};
use crate::error::{NnError, Result};
use crate::schedule::TrainSchedule;
use crate::unet::{build_segmenter, SegmenterConfig, UNet};
use dermpipe_core::digest::config_digest;
use dermpipe_core::TaskId;

/// Pointer to a persisted checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    /// Base path of the weight record (the file on disk is `<base>.mpk`).
    pub weights_path: PathBuf,
    pub epoch: usize,
    /// Best monitored value over all completed epochs at save time.
    pub monitored_value: f64,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegSidecar {
    pub config: SegmenterConfig,
    pub schedule: TrainSchedule,
    pub epoch: usize,
    pub monitored_value: f64,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClfSidecar {
    pub config: ClassifierConfig,
    pub task: TaskId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold_index: Option<usize>,
    pub epoch: usize,
    pub best_val_metric: f64,
    pub config_digest: String,
}

pub fn seg_digest(config: &SegmenterConfig, schedule: &TrainSchedule) -> String {
    config_digest(&(config, schedule))
}

pub fn clf_digest(config: &ClassifierConfig, task: &TaskId) -> String {
    config_digest(&(config, task))
}

fn recorder() -> NamedMpkFileRecorder<FullPrecisionSettings> {
    NamedMpkFileRecorder::<FullPrecisionSettings>::new()
}

fn save_weights<M: burn::module::Module<Train>>(module: M, base: &Path) -> Result<()> {
    if let Some(parent) = base.parent() {
        std::fs::create_dir_all(parent).map_err(|e| NnError::io(parent, e))?;
    }
    let tmp_base = base.with_file_name(format!(
        "{}__tmp",
        base.file_name().and_then(|f| f.to_str()).unwrap_or("weights")
    ));
    module
        .save_file(&tmp_base, &recorder())
        .map_err(|e| NnError::CorruptWeights { path: base.to_path_buf(), msg: e.to_string() })?;
    let tmp_file = tmp_base.with_extension("mpk");
    let final_file = base.with_extension("mpk");
    std::fs::rename(&tmp_file, &final_file).map_err(|e| NnError::io(&final_file, e))?;
    Ok(())
}

fn sidecar_path(base: &Path) -> PathBuf {
    base.with_extension("json")
}

pub fn save_seg_checkpoint(
    model: &UNet<Train>,
    config: &SegmenterConfig,
    schedule: &TrainSchedule,
    epoch: usize,
    monitored_value: f64,
    base: &Path,
) -> Result<CheckpointRecord> {
    let digest = seg_digest(config, schedule);
    save_weights(model.clone(), base)?;
    let sidecar = SegSidecar {
        config: config.clone(),
        schedule: schedule.clone(),
        epoch,
        monitored_value,
        config_digest: digest.clone(),
    };
    dermpipe_core::fsutil::write_atomic(&sidecar_path(base), &serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(CheckpointRecord {
        weights_path: base.to_path_buf(),
        epoch,
        monitored_value,
        config_digest: digest,
    })
}

/// Load a segmenter checkpoint for inference, verifying its digest.
pub fn load_seg_checkpoint(base: &Path) -> Result<(UNet<Infer>, SegSidecar)> {
    let sidecar_file = sidecar_path(base);
    let bytes = std::fs::read(&sidecar_file).map_err(|e| NnError::io(&sidecar_file, e))?;
    let sidecar: SegSidecar = serde_json::from_slice(&bytes)?;
    let computed = seg_digest(&sidecar.config, &sidecar.schedule);
    if computed != sidecar.config_digest {
        return Err(NnError::DigestMismatch { recorded: sidecar.config_digest, computed });
    }
    let model = build_segmenter::<Infer>(&sidecar.config, &device())?;
    let model = model.load_file(base, &recorder(), &device()).map_err(|e| NnError::CorruptWeights {
        path: base.with_extension("mpk"),
        msg: e.to_string(),
    })?;
    Ok((model, sidecar))
}

pub fn save_clf_checkpoint(
    model: &DenseNetClassifier<Train>,
    config: &ClassifierConfig,
    task: TaskId,
    fold_index: Option<usize>,
    epoch: usize,
    best_val_metric: f64,
    base: &Path,
) -> Result<ClfSidecar> {
    let digest = clf_digest(config, &task);
    save_weights(model.clone(), base)?;
    let sidecar = ClfSidecar {
        config: config.clone(),
        task,
        fold_index,
        epoch,
        best_val_metric,
        config_digest: digest,
    };
    dermpipe_core::fsutil::write_atomic(&sidecar_path(base), &serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(sidecar)
}

/// Load a classifier checkpoint for inference, verifying its digest.
pub fn load_clf_checkpoint(base: &Path) -> Result<(DenseNetClassifier<Infer>, ClfSidecar)> {
    let sidecar_file = sidecar_path(base);
    let bytes = std::fs::read(&sidecar_file).map_err(|e| NnError::io(&sidecar_file, e))?;
    let sidecar: ClfSidecar = serde_json::from_slice(&bytes)?;
    let computed = clf_digest(&sidecar.config, &sidecar.task);
    if computed != sidecar.config_digest {
        return Err(NnError::DigestMismatch { recorded: sidecar.config_digest, computed });
    }
    // weight loading replaces every tensor, so skip the pretrained-file gate
    let mut config = sidecar.config.clone();
    config.pretrained_weights = None;
    config.random_init = true;
    let model = build_classifier::<Infer>(&config, &device())?;
    let model = model.load_file(base, &recorder(), &device()).map_err(|e| NnError::CorruptWeights {
        path: base.with_extension("mpk"),
        msg: e.to_string(),
    })?;
    Ok((model, sidecar))
}
