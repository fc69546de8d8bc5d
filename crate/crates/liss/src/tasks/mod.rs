//! Task identities, per-task specifications and loss construction for the
//! four self-supervised pretext tasks plus the translation objective.

mod losses;
mod pretext;

pub use losses::{
    classification_loss, colorization_loss, cycle_loss, depth_loss, gan_discriminator_loss,
    gan_generator_loss, gan_losses, identity_loss, translation_objective, GanMode,
    COLORIZATION_GAN_WEIGHT, COLORIZATION_L1_WEIGHT,
};
pub use pretext::{
    grayify, make_jigsaw_sample, make_rotation_sample, normalize_depth, rotate90,
    tile_permute, PermutationTable, JIGSAW_CLASSES, ROTATION_CLASSES,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ROTATION_TASK_COUNT: usize = 4;

/// The five tasks, in their canonical curriculum order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    Rotation,
    Jigsaw,
    Depth,
    Colorization,
    Translation,
}

impl TaskId {
    pub const ALL: [TaskId; 5] = [
        TaskId::Rotation,
        TaskId::Jigsaw,
        TaskId::Depth,
        TaskId::Colorization,
        TaskId::Translation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskId::Rotation => "rotation",
            TaskId::Jigsaw => "jigsaw",
            TaskId::Depth => "depth",
            TaskId::Colorization => "colorization",
            TaskId::Translation => "translation",
        }
    }

    pub fn parse(s: &str) -> Result<TaskId> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownTask(s.to_string()))
    }

    pub fn kind(self) -> TaskKind {
        match self {
            TaskId::Rotation => TaskKind::Classification {
                classes: ROTATION_CLASSES,
            },
            TaskId::Jigsaw => TaskKind::Classification {
                classes: JIGSAW_CLASSES,
            },
            TaskId::Depth => TaskKind::Regression,
            TaskId::Colorization | TaskId::Translation => TaskKind::Generative,
        }
    }

    pub fn needs_discriminator(self) -> bool {
        matches!(self, TaskId::Colorization | TaskId::Translation)
    }

    pub fn is_pretext(self) -> bool {
        self != TaskId::Translation
    }
}

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Classification { classes: usize },
    Regression,
    Generative,
}

/// Validation bound gating a curriculum transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    /// Classification heads: accuracy must reach the bound.
    AccuracyAtLeast(f64),
    /// Regression/generative heads: mean L1 must drop to the bound.
    L1AtMost(f64),
}

impl Threshold {
    pub fn met(self, metric: f64) -> bool {
        match self {
            Threshold::AccuracyAtLeast(b) => metric >= b,
            Threshold::L1AtMost(b) => metric <= b,
        }
    }
}

pub const DEFAULT_ACCURACY_THRESHOLD: f64 = 0.85;
pub const DEFAULT_L1_THRESHOLD: f64 = 0.15;

/// Per-task training specification: loss weight and curriculum threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task: TaskId,
    pub weight: f64,
    pub threshold: Threshold,
}

impl TaskSpec {
    /// Spec with the stock weight (1) and threshold for `task`.
    pub fn defaults(task: TaskId) -> TaskSpec {
        let threshold = match task.kind() {
            TaskKind::Classification { .. } => {
                Threshold::AccuracyAtLeast(DEFAULT_ACCURACY_THRESHOLD)
            }
            TaskKind::Regression | TaskKind::Generative => {
                Threshold::L1AtMost(DEFAULT_L1_THRESHOLD)
            }
        };
        TaskSpec {
            task,
            weight: 1.0,
            threshold,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Result<TaskSpec> {
        if weight <= 0.0 {
            return Err(Error::Config(format!(
                "task weight for '{}' must be > 0, got {weight}",
                self.task
            )));
        }
        self.weight = weight;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weight <= 0.0 {
            return Err(Error::Config(format!(
                "task weight for '{}' must be > 0",
                self.task
            )));
        }
        let ok = match (self.task.kind(), self.threshold) {
            (TaskKind::Classification { .. }, Threshold::AccuracyAtLeast(_)) => true,
            (TaskKind::Regression | TaskKind::Generative, Threshold::L1AtMost(_)) => true,
            _ => false,
        };
        if !ok {
            return Err(Error::Config(format!(
                "threshold kind does not match task kind for '{}'",
                self.task
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_parse_round_trip() {
        for t in TaskId::ALL {
            assert_eq!(TaskId::parse(t.name()).unwrap(), t);
        }
        assert!(matches!(
            TaskId::parse("rotations"),
            Err(Error::UnknownTask(_))
        ));
    }

    #[test]
    fn default_thresholds_follow_task_kind() {
        assert_eq!(
            TaskSpec::defaults(TaskId::Rotation).threshold,
            Threshold::AccuracyAtLeast(0.85)
        );
        assert_eq!(
            TaskSpec::defaults(TaskId::Depth).threshold,
            Threshold::L1AtMost(0.15)
        );
        for t in TaskId::ALL {
            TaskSpec::defaults(t).validate().unwrap();
        }
    }

    #[test]
    fn mismatched_threshold_rejected() {
        let bad = TaskSpec {
            task: TaskId::Rotation,
            weight: 1.0,
            threshold: Threshold::L1AtMost(0.15),
        };
        assert!(bad.validate().is_err());
        assert!(TaskSpec::defaults(TaskId::Jigsaw).with_weight(-1.0).is_err());
    }
}
