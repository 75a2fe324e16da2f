//! Two-stage analysis engine: LOF novelty detection on 2-D embeddings and a
//! random-forest categorizer for flagged traffic.

mod forest;
mod kdtree;
mod label;
mod lof;
mod metrics;
mod tuning;

pub use forest::{
    classify, train_forest, Classification, DecisionTree, ForestConfig, ForestModel, TreeNode,
    DEFAULT_TREES,
};
pub use kdtree::{KdTree, Neighbor};
pub use label::{AttackLabel, Label, UnknownLabel};
pub use lof::{
    calibrate_threshold, fit_lof, lof_score, quantile, LofModel, DEFAULT_QUANTILE, LRD_CAP,
    THRESHOLD_FLOOR,
};
pub use metrics::{evaluate, ConfusionMatrix, Metrics};
pub use tuning::{tune_k, KStats, TuneConfig, TuneReport};
pub(crate) use tuning::resplit;

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DetectError {
    #[error("neighborhood size {k} needs more than {k} training points, got {points}")]
    InvalidK { k: usize, points: usize },
    #[error("training points must be finite")]
    NonFinite,
    #[error("threshold calibration needs a non-empty hold-out set")]
    EmptyHoldout,
    #[error("at least two classes are required")]
    SingleClass,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("expected {expected} features, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
