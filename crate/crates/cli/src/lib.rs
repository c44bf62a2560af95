//! Command implementations behind the `dermpipe` binary. Exposed as a
//! library so integration tests can drive stages directly.

pub mod config;
pub mod drivers;
pub mod error;
pub mod stages;
pub mod synthetic;

pub use config::{Overrides, PipelineConfig};
pub use drivers::{cmd_dry_run, cmd_reproduce, ReproTarget};
pub use error::{CliError, Result};
pub use stages::{
    cmd_evaluate, cmd_ingest, cmd_preprocess, cmd_segment, cmd_split, cmd_train_clf,
    cmd_train_seg, CropCache, Layout,
};
