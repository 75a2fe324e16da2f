//! Offline-fitted transforms feeding the two detection pipelines: min-max
//! scaling and a 2-component PCA for the anomaly detector; min-max scaling,
//! a correlation filter and recursive feature elimination for the
//! categorizer.

mod correlation;
mod eigen;
mod minmax;
mod models;
mod pca;
mod rfe;
mod split;

pub use correlation::{fit_correlation_filter, pearson_matrix, CORRELATION_THRESHOLD};
pub use eigen::{symmetric_eigen, SymmetricEigen};
pub use minmax::{apply_minmax, fit_minmax, Bound, MinMaxBounds, CONSTANT_SPAN_TOLERANCE};
pub use models::{feature_indices, PipelineModels};
pub use pca::{fit_pca, project, PcaModel};
pub use rfe::{run_rfe, FeatureSelection, RfeStep, RFE_FIT_FRACTION};
pub use split::stratified_split;

use thiserror::Error;

use crate::detect::DetectError;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PreprocessError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("expected {expected} columns, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("need at least {needed} rows, got {rows}")]
    TooFewRows { rows: usize, needed: usize },
    #[error("at least two classes are required")]
    SingleClass,
    #[error("feature selection is empty")]
    EmptySelection,
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error(transparent)]
    Detect(#[from] DetectError),
}
