use std::fmt;

use serde::{Deserialize, Serialize};

use super::{train, ModelSpec, Stream, TrainConfig, TrainError};
use crate::sap::{SapConfig, Variant};
use crate::skeleton::{SkeletonLayout, SkeletonSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationAxis {
    /// SAP angles with H ∈ {1, 3, 5, 7}.
    HeadCount,
    /// Fixed joints, then SAP placed per frame, on frame-0 joints with a
    /// sharp softmax, on frame-0 joints, and around the body.
    AnchorLocation,
}

impl std::str::FromStr for AblationAxis {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "head-count" => Ok(Self::HeadCount),
            "anchor-location" => Ok(Self::AnchorLocation),
            _ => Err(TrainError::InvalidConfig(format!(
                "unknown ablation axis {s:?}"
            ))),
        }
    }
}

/// Softmax temperature for the anchors-on-joints arm.
pub const ON_JOINTS_ALPHA: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum AblationArm {
    Heads { heads: usize },
    FixedJoints,
    Location { variant: Variant, alpha: f64 },
}

impl fmt::Display for AblationArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AblationArm::Heads { heads } => write!(f, "heads-{heads}"),
            AblationArm::FixedJoints => f.write_str("fixed-7"),
            AblationArm::Location { variant, alpha } if *alpha == ON_JOINTS_ALPHA => {
                write!(f, "{variant}-alpha{alpha}")
            }
            AblationArm::Location { variant, .. } => write!(f, "{variant}"),
        }
    }
}

impl AblationAxis {
    pub fn arms(self, base: &SapConfig) -> Vec<AblationArm> {
        match self {
            AblationAxis::HeadCount => [1, 3, 5, 7]
                .into_iter()
                .map(|heads| AblationArm::Heads { heads })
                .collect(),
            AblationAxis::AnchorLocation => vec![
                AblationArm::FixedJoints,
                AblationArm::Location {
                    variant: Variant::V1,
                    alpha: base.alpha,
                },
                AblationArm::Location {
                    variant: Variant::V2,
                    alpha: ON_JOINTS_ALPHA,
                },
                AblationArm::Location {
                    variant: Variant::V2,
                    alpha: base.alpha,
                },
                AblationArm::Location {
                    variant: Variant::V3,
                    alpha: base.alpha,
                },
            ],
        }
    }
}

impl AblationArm {
    /// The base configs with this arm's changes applied.
    pub fn apply(&self, train: &TrainConfig, sap: &SapConfig) -> (TrainConfig, SapConfig) {
        let mut train = train.clone();
        let mut sap = sap.clone();
        match *self {
            AblationArm::Heads { heads } => {
                sap.heads = heads;
                train.streams = vec![Stream::AnglesSap];
            }
            AblationArm::FixedJoints => train.streams = vec![Stream::AnglesFixed],
            AblationArm::Location { variant, alpha } => {
                sap.variant = variant;
                sap.alpha = alpha;
                train.streams = vec![Stream::AnglesSap];
            }
        }
        (train, sap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: String,
    pub seed: u64,
    pub test_accuracy: f64,
    /// `None` when no epoch ran.
    pub final_train_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn accuracy(&self, arm: &str, seed: u64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.arm == arm && r.seed == seed)
            .map(|r| r.test_accuracy)
    }
}

/// Trains every arm of `axis` once per seed on a fixed dataset. The seed
/// replaces `train.seed`, so it drives initialisation and shuffling.
pub fn run_ablation(
    axis: AblationAxis,
    seeds: &[u64],
    layout: &SkeletonLayout,
    classes: usize,
    train_set: &[SkeletonSequence],
    test_set: &[SkeletonSequence],
    train_cfg: &TrainConfig,
    sap_cfg: &SapConfig,
) -> Result<AblationTable, TrainError> {
    let frames = train_set.first().ok_or(TrainError::EmptyDataset)?.frames();
    let mut rows = Vec::new();
    for arm in axis.arms(sap_cfg) {
        for &seed in seeds {
            let (mut t, s) = arm.apply(train_cfg, sap_cfg);
            t.seed = seed;
            t.eval_every = 0;
            let spec = ModelSpec::new(frames, classes, layout.clone(), &t, &s)?;
            let (_, report) = train(&spec, train_set, Some(test_set), &t)?;
            let test_accuracy = report.final_test.as_ref().map_or(0.0, |e| e.accuracy);
            log::info!("{axis:?} {arm} seed {seed}: test accuracy {test_accuracy:.3}");
            rows.push(AblationRow {
                arm: arm.to_string(),
                seed,
                test_accuracy,
                final_train_loss: report.epochs.last().map(|e| e.train_loss),
            });
        }
    }
    Ok(AblationTable { axis, rows })
}
