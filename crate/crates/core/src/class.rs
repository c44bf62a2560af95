//! Lesion class vocabulary and task groupings.
//!
//! Seven base diagnosis classes are recognized. A [`TaskId`] maps them onto
//! the labels of one concrete classification task: four binary groupings and
//! the full seven-class problem.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::CoreError;

/// The seven base diagnosis classes, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseClass {
    /// Squamous / actinic cell carcinoma.
    Akiec,
    /// Basal cell carcinoma.
    Bcc,
    /// Benign keratosis.
    Bkl,
    /// Dermatofibroma.
    Df,
    /// Melanoma.
    Mel,
    /// Melanocytic nevus.
    Nv,
    /// Vascular lesion.
    Vasc,
}

impl BaseClass {
    pub const ALL: [BaseClass; 7] = [
        BaseClass::Akiec,
        BaseClass::Bcc,
        BaseClass::Bkl,
        BaseClass::Df,
        BaseClass::Mel,
        BaseClass::Nv,
        BaseClass::Vasc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaseClass::Akiec => "akiec",
            BaseClass::Bcc => "bcc",
            BaseClass::Bkl => "bkl",
            BaseClass::Df => "df",
            BaseClass::Mel => "mel",
            BaseClass::Nv => "nv",
            BaseClass::Vasc => "vasc",
        }
    }

    /// Index within [`BaseClass::ALL`].
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|c| *c == self).expect("member of ALL")
    }
}

impl fmt::Display for BaseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaseClass {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "akiec" => Ok(BaseClass::Akiec),
            "bcc" => Ok(BaseClass::Bcc),
            "bkl" => Ok(BaseClass::Bkl),
            "df" => Ok(BaseClass::Df),
            "mel" => Ok(BaseClass::Mel),
            "nv" => Ok(BaseClass::Nv),
            "vasc" => Ok(BaseClass::Vasc),
            other => Err(CoreError::UnknownClass(other.to_string())),
        }
    }
}

/// Identifier of a classification task grouping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    /// Melanocytic (mel, nv) vs everything else.
    MelanocyticVsNon,
    /// Melanoma vs melanocytic nevus only.
    MelVsNv,
    /// Benign (bkl, df, vasc) vs malignant (akiec, bcc), non-melanocytic only.
    BenignVsMalignant,
    /// Cancerous (mel, bcc, akiec) vs non-cancerous (bkl, df, vasc, nv).
    CancerVsNoncancer,
    /// All seven base classes.
    SevenClass,
}

impl TaskId {
    pub const ALL: [TaskId; 5] = [
        TaskId::MelanocyticVsNon,
        TaskId::MelVsNv,
        TaskId::BenignVsMalignant,
        TaskId::CancerVsNoncancer,
        TaskId::SevenClass,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskId::MelanocyticVsNon => "melanocytic_vs_non",
            TaskId::MelVsNv => "mel_vs_nv",
            TaskId::BenignVsMalignant => "benign_vs_malignant",
            TaskId::CancerVsNoncancer => "cancer_vs_noncancer",
            TaskId::SevenClass => "seven_class",
        }
    }

    pub fn is_binary(self) -> bool {
        !matches!(self, TaskId::SevenClass)
    }

    /// Number of task labels (2 for binary tasks, 7 for seven_class).
    pub fn num_labels(self) -> usize {
        self.grouping().labels.len()
    }

    pub fn grouping(self) -> TaskGrouping {
        TaskGrouping::for_task(self)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskId {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "melanocytic_vs_non" => Ok(TaskId::MelanocyticVsNon),
            "mel_vs_nv" => Ok(TaskId::MelVsNv),
            "benign_vs_malignant" => Ok(TaskId::BenignVsMalignant),
            "cancer_vs_noncancer" => Ok(TaskId::CancerVsNoncancer),
            "seven_class" => Ok(TaskId::SevenClass),
            other => Err(CoreError::UnknownTask(other.to_string())),
        }
    }
}

/// Concrete mapping from base classes onto one task's label set.
///
/// `labels` is the ordered label vocabulary of the task. For binary tasks the
/// positive label comes first. `class_map` is total over the classes admitted
/// by [`TaskGrouping::admits`].
#[derive(Debug, Clone)]
pub struct TaskGrouping {
    pub task: TaskId,
    pub labels: Vec<&'static str>,
    /// Index into `labels` of the positive class; binary tasks only.
    pub positive: Option<usize>,
}

impl TaskGrouping {
    pub fn for_task(task: TaskId) -> Self {
        let (labels, positive): (Vec<&'static str>, Option<usize>) = match task {
            TaskId::MelanocyticVsNon => (vec!["melanocytic", "non_melanocytic"], Some(0)),
            TaskId::MelVsNv => (vec!["melanoma", "nevus"], Some(0)),
            TaskId::BenignVsMalignant => (vec!["benign", "malignant"], Some(0)),
            TaskId::CancerVsNoncancer => (vec!["cancerous", "non_cancerous"], Some(0)),
            TaskId::SevenClass => (BaseClass::ALL.iter().map(|c| c.name()).collect(), None),
        };
        TaskGrouping { task, labels, positive }
    }

    /// Whether records of `class` participate in this task.
    pub fn admits(&self, class: BaseClass) -> bool {
        match self.task {
            TaskId::MelanocyticVsNon | TaskId::CancerVsNoncancer | TaskId::SevenClass => true,
            TaskId::MelVsNv => matches!(class, BaseClass::Mel | BaseClass::Nv),
            TaskId::BenignVsMalignant => !matches!(class, BaseClass::Mel | BaseClass::Nv),
        }
    }

    /// Task-label index for an admitted base class.
    pub fn label_index(&self, class: BaseClass) -> Option<usize> {
        if !self.admits(class) {
            return None;
        }
        let idx = match self.task {
            TaskId::MelanocyticVsNon => match class {
                BaseClass::Mel | BaseClass::Nv => 0,
                _ => 1,
            },
            TaskId::MelVsNv => match class {
                BaseClass::Mel => 0,
                _ => 1,
            },
            TaskId::BenignVsMalignant => match class {
                BaseClass::Bkl | BaseClass::Df | BaseClass::Vasc => 0,
                _ => 1,
            },
            TaskId::CancerVsNoncancer => match class {
                BaseClass::Mel | BaseClass::Bcc | BaseClass::Akiec => 0,
                _ => 1,
            },
            TaskId::SevenClass => class.index(),
        };
        Some(idx)
    }

    /// Task-label name for an admitted base class.
    pub fn label_of(&self, class: BaseClass) -> Option<&'static str> {
        self.label_index(class).map(|i| self.labels[i])
    }

    pub fn positive_label(&self) -> Option<&'static str> {
        self.positive.map(|i| self.labels[i])
    }
}
