//! Model crate of the dermpipe lesion pipeline: the segmentation network,
//! the densely connected classifier, their training loops with plateau
//! scheduling and best-weight checkpointing, and the batch mask/QC stage.

pub mod backend;
pub mod checkpoint;
pub mod clftrain;
pub mod data;
pub mod densenet;
pub mod error;
pub mod maskstage;
pub mod schedule;
pub mod segtrain;
pub mod unet;

pub use backend::{device, Infer, Train};
pub use checkpoint::{
    load_clf_checkpoint, load_seg_checkpoint, save_clf_checkpoint, save_seg_checkpoint,
    CheckpointRecord, ClfSidecar, SegSidecar,
};
pub use clftrain::{decide_label, predict_proba, train_classifier};
pub use data::{clf_sample_from_crop, load_seg_samples, seg_sample, ClfSample, SegSample};
pub use densenet::{
    build_classifier, head_param_count, save_backbone, BackboneConfig, ClassifierConfig,
    DenseNetClassifier, HeadConfig,
};
pub use error::{NnError, Result};
pub use maskstage::{accepted_only, run_mask_stage, QcSummary, QcSummaryRow};
pub use schedule::{
    EpochRecord, PlateauDriver, ScheduleAction, TrainingHistory, TrainSchedule,
};
pub use segtrain::{
    evaluate_segmenter, predict_prob_map, predict_prob_maps, seg_scores, train_segmenter,
    SegEvalReport,
};
pub use unet::{build_segmenter, SegmenterConfig, UNet};
