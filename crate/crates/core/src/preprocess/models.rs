use serde::{Deserialize, Serialize};

use super::{MinMaxBounds, PcaModel, PreprocessError};
use crate::telemetry::{feature_index, BaselineHistogram, FeatureVector, FEATURE_COUNT};

/// Frozen transforms for both pipelines plus the per-peer baselines the
/// sensor needs. Fitted offline, never updated online.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineModels {
    /// Detector pipeline bounds, fitted on benign traffic.
    pub minmax: MinMaxBounds,
    pub pca: PcaModel,
    /// Categorizer pipeline bounds, fitted on the labeled training rows.
    pub classifier_minmax: MinMaxBounds,
    pub corr_kept: Vec<String>,
    pub rfe_kept: Vec<String>,
    pub baselines: Vec<BaselineHistogram>,
}

/// Resolves feature names to column indices.
pub fn feature_indices(names: &[String]) -> Result<Vec<usize>, PreprocessError> {
    names
        .iter()
        .map(|n| feature_index(n).ok_or_else(|| PreprocessError::UnknownFeature(n.clone())))
        .collect()
}

impl PipelineModels {
    /// Detector input: min-max normalize all 14 metrics, project to 2-D.
    pub fn embed(&self, features: &FeatureVector) -> Result<[f64; 2], PreprocessError> {
        let normalized = self.minmax.apply(&features.to_array())?;
        let p = self.pca.project(&normalized)?;
        match p[..] {
            [a, b] => Ok([a, b]),
            _ => Err(PreprocessError::Arity {
                expected: 2,
                got: p.len(),
            }),
        }
    }

    /// Categorizer input: the RFE-selected metrics, normalized.
    pub fn classifier_row(&self, features: &FeatureVector) -> Result<Vec<f64>, PreprocessError> {
        let normalized = self.classifier_minmax.apply(&features.to_array())?;
        Ok(feature_indices(&self.rfe_kept)?
            .into_iter()
            .map(|i| normalized[i])
            .collect())
    }

    pub fn validate(&self) -> Result<(), PreprocessError> {
        for width in [self.minmax.width(), self.classifier_minmax.width(), self.pca.dims()] {
            if width != FEATURE_COUNT {
                return Err(PreprocessError::Arity {
                    expected: FEATURE_COUNT,
                    got: width,
                });
            }
        }
        if self.pca.components.len() != 2 {
            return Err(PreprocessError::Arity {
                expected: 2,
                got: self.pca.components.len(),
            });
        }
        if self.rfe_kept.is_empty() {
            return Err(PreprocessError::EmptySelection);
        }
        feature_indices(&self.corr_kept)?;
        feature_indices(&self.rfe_kept)?;
        Ok(())
    }
}
