//! Core building blocks of the dermpipe lesion pipeline: dataset manifests,
//! deterministic splits and folds, binary-mask processing and quality
//! control, crop preprocessing, and the full evaluation metric suite.
//!
//! Everything in this crate is pure CPU logic with no model dependencies;
//! the `dermpipe-nn` crate builds the networks on top of these types.

pub mod class;
pub mod dataset;
pub mod digest;
pub mod error;
pub mod fsutil;
pub mod mask;
pub mod metrics;
pub mod preprocess;
pub mod report;
pub mod split;

pub use class::{BaseClass, TaskGrouping, TaskId};
pub use dataset::{apply_grouping, load_manifest, DatasetManifest, ImageRecord, QcStatus, Source};
pub use error::{CoreError, Result};
pub use mask::{
    binarize, connected_components, dilate, qc_mask, BinaryMask, Connectivity, QcPolicy, QcReason,
    QcVerdict,
};
pub use metrics::{
    aggregate_folds, argmax, binary_metrics, confusion_matrix, decide_binary, multiclass_metrics,
    roc_auc, BinaryMetrics, ConfusionMatrix, FoldAggregate, MulticlassMetrics,
};
pub use preprocess::{
    crop_and_resize, normalize_range, resize_plane, resize_rgb, to_preprocessed, CropProvenance,
    NormalizeOutcome, PreprocessedImage, RgbPlanes,
};
pub use report::{render_report, roc_curve, RocPoint, TaskReport};
pub use split::{check_stratification, make_folds, make_holdout_split, FoldPlan, SplitPlan};
