use serde::{Deserialize, Serialize};

use super::split::stratified_split;
use super::PreprocessError;
use crate::detect::{train_forest, AttackLabel, ConfusionMatrix, ForestConfig, Label};

/// Share of the training partition the RFE forests are fitted on; the rest
/// scores each candidate subset.
pub const RFE_FIT_FRACTION: f64 = 0.75;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfeStep {
    pub features: Vec<String>,
    pub validation_accuracy: f64,
    /// Feature removed after this step, if any.
    pub dropped: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub kept_after_correlation: Vec<String>,
    pub kept_after_rfe: Vec<String>,
    pub rfe_accuracy_trace: Vec<RfeStep>,
}

impl FeatureSelection {
    pub fn best_accuracy(&self) -> f64 {
        self.rfe_accuracy_trace
            .iter()
            .map(|s| s.validation_accuracy)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Recursive feature elimination over the columns `candidates` of `rows`.
///
/// Each round fits a forest on a stratified, seeded 75% of the rows,
/// measures accuracy on the remaining 25%, and removes the column with the
/// lowest mean decrease in impurity (the later column on ties). The subset
/// with the highest validation accuracy wins; ties go to the smaller subset.
pub fn run_rfe(
    rows: &[Vec<f64>],
    labels: &[AttackLabel],
    names: &[String],
    candidates: &[usize],
    forest: &ForestConfig,
    split_seed: u64,
) -> Result<FeatureSelection, PreprocessError> {
    if candidates.is_empty() {
        return Err(PreprocessError::EmptySelection);
    }
    let mut classes = labels.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(PreprocessError::SingleClass);
    }
    let (fit_idx, val_idx) = stratified_split(labels, RFE_FIT_FRACTION, split_seed);
    if val_idx.is_empty() {
        return Err(PreprocessError::TooFewRows {
            rows: rows.len(),
            needed: 4,
        });
    }

    let mut current: Vec<usize> = candidates.to_vec();
    let mut trace = Vec::new();
    loop {
        let project = |idx: &[usize]| -> Vec<Vec<f64>> {
            idx.iter()
                .map(|&i| current.iter().map(|&c| rows[i][c]).collect())
                .collect()
        };
        let fit_rows = project(&fit_idx);
        let fit_labels: Vec<AttackLabel> = fit_idx.iter().map(|&i| labels[i]).collect();
        let subset_names: Vec<String> = current.iter().map(|&c| names[c].clone()).collect();
        let model = train_forest(&fit_rows, &fit_labels, &subset_names, forest)?;
        let val_rows = project(&val_idx);
        let predicted: Vec<Label> = model.predict_batch(&val_rows)?.into_iter().map(Label::from).collect();
        let truth: Vec<Label> = val_idx.iter().map(|&i| Label::from(labels[i])).collect();
        let accuracy = ConfusionMatrix::build(&predicted, &truth)?.accuracy();

        let mut step = RfeStep {
            features: subset_names,
            validation_accuracy: accuracy,
            dropped: None,
        };
        if current.len() == 1 {
            trace.push(step);
            break;
        }
        let mut weakest = 0;
        for (i, &imp) in model.importances.iter().enumerate() {
            if imp <= model.importances[weakest] {
                weakest = i;
            }
        }
        step.dropped = Some(names[current[weakest]].clone());
        trace.push(step);
        current.remove(weakest);
    }

    let mut best = 0;
    for (i, step) in trace.iter().enumerate() {
        if step.validation_accuracy >= trace[best].validation_accuracy {
            best = i;
        }
    }
    Ok(FeatureSelection {
        kept_after_correlation: candidates.iter().map(|&c| names[c].clone()).collect(),
        kept_after_rfe: trace[best].features.clone(),
        rfe_accuracy_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn two_features_give_two_steps() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..80)
            .map(|i| vec![(i % 2) as f64 + rng.random_range(0.0..0.3), rng.random::<f64>()])
            .collect();
        let labels: Vec<AttackLabel> = (0..80)
            .map(|i| if i % 2 == 0 { AttackLabel::Ex1 } else { AttackLabel::Ex4 })
            .collect();
        let names = vec!["signal".to_string(), "noise".to_string()];
        let cfg = ForestConfig {
            n_trees: 25,
            ..ForestConfig::with_seed(1)
        };
        let sel = run_rfe(&rows, &labels, &names, &[0, 1], &cfg, 3).unwrap();
        assert_eq!(sel.rfe_accuracy_trace.len(), 2);
        assert_eq!(sel.rfe_accuracy_trace[0].dropped.as_deref(), Some("noise"));
        assert_eq!(sel.kept_after_rfe, vec!["signal".to_string()]);
        assert_eq!(sel.best_accuracy(), 1.0);
    }

    #[test]
    fn single_class_is_rejected() {
        let rows = vec![vec![0.0]; 10];
        let names = vec!["a".to_string()];
        let r = run_rfe(&rows, &[AttackLabel::Ex2; 10], &names, &[0], &ForestConfig::default(), 0);
        assert!(matches!(r, Err(PreprocessError::SingleClass)));
    }
}
