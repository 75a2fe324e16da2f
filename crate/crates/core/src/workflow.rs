//! End-to-end training and evaluation: fits both pipelines, tunes and
//! calibrates the detector, trains the categorizer, and scores labeled
//! datasets.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::detect::{
    calibrate_threshold, fit_lof, resplit, train_forest, tune_k, AttackLabel, Classification,
    ConfusionMatrix, DetectError, ForestConfig, ForestModel, Label, LofModel, Metrics, TuneConfig,
    TuneReport, DEFAULT_TREES,
};
use crate::par;
use crate::preprocess::{
    feature_indices, fit_correlation_filter, fit_pca, run_rfe, stratified_split, FeatureSelection,
    MinMaxBounds, PipelineModels, PreprocessError, CORRELATION_THRESHOLD,
};
use crate::telemetry::{BaselineHistogram, FeatureRow, FeatureVector, FEATURE_COUNT, FEATURE_NAMES};

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Everything the relay needs at runtime, persisted as one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub pipeline: PipelineModels,
    pub lof: LofModel,
    pub forest: ForestModel,
}

/// Detector verdict for one feature vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub embedding: [f64; 2],
    pub score: f64,
    pub anomalous: bool,
}

impl ModelBundle {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("models serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, WorkflowError> {
        let bundle: ModelBundle = serde_json::from_str(text)?;
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn load(path: &Path) -> Result<Self, WorkflowError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), WorkflowError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    /// SHA-256 of the serialized bundle, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), WorkflowError> {
        self.pipeline.validate()?;
        if self.forest.feature_names != self.pipeline.rfe_kept {
            return Err(WorkflowError::Data(format!(
                "forest features {:?} differ from the selected features {:?}",
                self.forest.feature_names, self.pipeline.rfe_kept
            )));
        }
        if self.lof.points.len() <= self.lof.k {
            return Err(DetectError::InvalidK {
                k: self.lof.k,
                points: self.lof.points.len(),
            }
            .into());
        }
        Ok(())
    }

    pub fn detect(&self, features: &FeatureVector) -> Result<Detection, WorkflowError> {
        let embedding = self.pipeline.embed(features)?;
        let score = self.lof.score(&embedding);
        Ok(Detection {
            embedding,
            score,
            anomalous: self.lof.is_anomalous(score),
        })
    }

    pub fn categorize(&self, features: &FeatureVector) -> Result<Classification, WorkflowError> {
        let row = self.pipeline.classifier_row(features)?;
        Ok(self.forest.classify(&row)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub k_values: Vec<usize>,
    pub repeats: usize,
    pub quantile: f64,
    pub n_trees: usize,
    /// Share of labeled attack rows held out from categorizer training.
    pub holdout_fraction: f64,
    pub correlation_threshold: f64,
}

impl TrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        let tune = TuneConfig::default();
        TrainConfig {
            seed,
            k_values: tune.k_values,
            repeats: tune.repeats,
            quantile: tune.quantile,
            n_trees: DEFAULT_TREES,
            holdout_fraction: 0.25,
            correlation_threshold: CORRELATION_THRESHOLD,
        }
    }

    fn forest(&self) -> ForestConfig {
        ForestConfig {
            n_trees: self.n_trees,
            ..ForestConfig::with_seed(self.seed)
        }
    }
}

/// One row of the preprocessing ablation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub configuration: String,
    pub features: Vec<String>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub test_macro_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub seed: u64,
    pub benign_rows: usize,
    pub labeled_rows: usize,
    pub attack_rows: usize,
    pub explained_variance_ratio: Vec<f64>,
    pub tuning: TuneReport,
    pub lof_k: usize,
    pub threshold: f64,
    pub selection: FeatureSelection,
    pub ablation: Vec<AblationRow>,
    pub holdout_accuracy: f64,
    pub holdout_macro_accuracy: f64,
    pub forest_oob_error: Option<f64>,
}

fn arrays(rows: &[FeatureRow]) -> Vec<[f64; FEATURE_COUNT]> {
    rows.iter().map(|r| r.features.to_array()).collect()
}

fn labels_of(rows: &[FeatureRow]) -> Result<Vec<Label>, WorkflowError> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            r.label
                .ok_or_else(|| WorkflowError::Data(format!("row {i} has no label")))
        })
        .collect()
}

fn select(rows: &[Vec<f64>], idx: &[usize], cols: &[usize]) -> Vec<Vec<f64>> {
    idx.iter()
        .map(|&i| cols.iter().map(|&c| rows[i][c]).collect())
        .collect()
}

fn names(cols: &[usize]) -> Vec<String> {
    cols.iter().map(|&c| FEATURE_NAMES[c].to_string()).collect()
}

fn accuracies(model: &ForestModel, rows: &[Vec<f64>], truth: &[AttackLabel]) -> Result<(f64, f64), WorkflowError> {
    let pred: Vec<Label> = model.predict_batch(rows)?.into_iter().map(Label::from).collect();
    let truth: Vec<Label> = truth.iter().map(|&l| Label::from(l)).collect();
    let cm = ConfusionMatrix::build(&pred, &truth)?;
    Ok((cm.accuracy(), cm.macro_accuracy()))
}

/// Fits Pipeline I and the detector on `benign` (Dataset I), tunes k against
/// `labeled` (Dataset II), then fits Pipeline II and the categorizer on the
/// labeled attack rows.
pub fn train(
    benign: &[FeatureRow],
    labeled: &[FeatureRow],
    baselines: Vec<BaselineHistogram>,
    config: &TrainConfig,
) -> Result<(ModelBundle, TrainingReport), WorkflowError> {
    if benign.is_empty() {
        return Err(WorkflowError::Data("benign dataset is empty".into()));
    }
    let truth = labels_of(labeled)?;

    // Pipeline I and the novelty detector.
    let benign_raw = arrays(benign);
    let minmax = MinMaxBounds::fit(&benign_raw)?;
    let benign_norm: Vec<Vec<f64>> = benign_raw
        .iter()
        .map(|r| minmax.apply(r))
        .collect::<Result<_, _>>()?;
    let pca = fit_pca(&benign_norm, 2)?;
    let embed = |raw: &[f64]| -> Result<[f64; 2], PreprocessError> {
        let p = pca.project(&minmax.apply(raw)?)?;
        Ok([p[0], p[1]])
    };
    let benign_emb: Vec<[f64; 2]> = benign_raw.iter().map(|r| embed(r)).collect::<Result<_, _>>()?;
    let validation: Vec<([f64; 2], bool)> = labeled
        .iter()
        .zip(&truth)
        .map(|(r, t)| Ok((embed(&r.features.to_array())?, t.is_attack())))
        .collect::<Result<_, PreprocessError>>()?;
    let tune_cfg = TuneConfig {
        k_values: config.k_values.clone(),
        repeats: config.repeats,
        seed: config.seed,
        fit_fraction: 0.75,
        quantile: config.quantile,
    };
    let tuning = tune_k(&benign_emb, &validation, &tune_cfg)?;
    let (fit_idx, cal_idx) = resplit(benign_emb.len(), tune_cfg.fit_fraction, config.seed);
    let fit_pts: Vec<[f64; 2]> = fit_idx.iter().map(|&i| benign_emb[i]).collect();
    let cal_pts: Vec<[f64; 2]> = cal_idx.iter().map(|&i| benign_emb[i]).collect();
    let mut lof = fit_lof(&fit_pts, tuning.best_k)?;
    let threshold = calibrate_threshold(&mut lof, &cal_pts, config.quantile)?;

    // Pipeline II and the categorizer, on labeled attack rows only.
    let attack_pos: Vec<usize> = (0..labeled.len()).filter(|&i| truth[i].is_attack()).collect();
    let attack_labels: Vec<AttackLabel> = attack_pos.iter().filter_map(|&i| truth[i].attack()).collect();
    let attack_raw: Vec<Vec<f64>> = attack_pos
        .iter()
        .map(|&i| labeled[i].features.to_array().to_vec())
        .collect();
    let mut distinct = attack_labels.clone();
    distinct.sort();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(WorkflowError::Data(format!(
            "categorizer needs at least two attack labels, found {}",
            distinct.len()
        )));
    }
    let (train_idx, test_idx) = stratified_split(&attack_labels, 1.0 - config.holdout_fraction, config.seed);
    if test_idx.is_empty() {
        return Err(WorkflowError::Data("hold-out partition is empty".into()));
    }
    let classifier_minmax = MinMaxBounds::fit(&train_idx.iter().map(|&i| attack_raw[i].clone()).collect::<Vec<_>>())?;
    let attack_norm: Vec<Vec<f64>> = attack_raw
        .iter()
        .map(|r| classifier_minmax.apply(r))
        .collect::<Result<_, _>>()?;
    let train_norm = select(&attack_norm, &train_idx, &(0..FEATURE_COUNT).collect::<Vec<_>>());
    let train_labels: Vec<AttackLabel> = train_idx.iter().map(|&i| attack_labels[i]).collect();
    let test_labels: Vec<AttackLabel> = test_idx.iter().map(|&i| attack_labels[i]).collect();
    let corr_cols = fit_correlation_filter(&train_norm, config.correlation_threshold)?;
    let all_names: Vec<String> = names(&(0..FEATURE_COUNT).collect::<Vec<_>>());
    let selection = run_rfe(&train_norm, &train_labels, &all_names, &corr_cols, &config.forest(), config.seed)?;
    let rfe_cols = feature_indices(&selection.kept_after_rfe)?;

    let all_cols: Vec<usize> = (0..FEATURE_COUNT).collect();
    let configurations: [(&str, &Vec<Vec<f64>>, &[usize]); 4] = [
        ("all-features", &attack_raw, &all_cols),
        ("normalization", &attack_norm, &all_cols),
        ("+correlation filter", &attack_norm, &corr_cols),
        ("+RFE", &attack_norm, &rfe_cols),
    ];
    let mut ablation = Vec::new();
    let mut forest = None;
    for (name, data, cols) in configurations {
        let model = train_forest(&select(data, &train_idx, cols), &train_labels, &names(cols), &config.forest())?;
        let (train_accuracy, _) = accuracies(&model, &select(data, &train_idx, cols), &train_labels)?;
        let (test_accuracy, test_macro_accuracy) = accuracies(&model, &select(data, &test_idx, cols), &test_labels)?;
        ablation.push(AblationRow {
            configuration: name.to_string(),
            features: names(cols),
            train_accuracy,
            test_accuracy,
            test_macro_accuracy,
        });
        forest = Some(model);
    }
    let forest = forest.expect("four configurations");
    let last = ablation.last().expect("four configurations");

    let pipeline = PipelineModels {
        minmax,
        pca: pca.clone(),
        classifier_minmax,
        corr_kept: selection.kept_after_correlation.clone(),
        rfe_kept: selection.kept_after_rfe.clone(),
        baselines,
    };
    let report = TrainingReport {
        seed: config.seed,
        benign_rows: benign.len(),
        labeled_rows: labeled.len(),
        attack_rows: attack_pos.len(),
        explained_variance_ratio: pca.explained_variance_ratio.clone(),
        lof_k: tuning.best_k,
        tuning,
        threshold,
        selection,
        holdout_accuracy: last.test_accuracy,
        holdout_macro_accuracy: last.test_macro_accuracy,
        forest_oob_error: forest.oob_error,
        ablation,
    };
    let bundle = ModelBundle { pipeline, lof, forest };
    bundle.validate()?;
    Ok((bundle, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Binary detector metrics, attack = positive.
    pub stage1: Metrics,
    /// Categorizer accuracy over the truly malicious rows.
    pub stage2_accuracy: f64,
    pub stage2_macro_accuracy: f64,
    pub stage2_rows: usize,
    /// Detector followed by categorizer, seven-way.
    pub end_to_end_accuracy: f64,
    pub models_hash: String,
}

pub struct Evaluation {
    pub report: EvalReport,
    pub stage2_confusion: ConfusionMatrix,
    pub end_to_end_confusion: ConfusionMatrix,
    pub scores: Vec<f64>,
}

/// Scores every labeled row with the detector and every attack row with the
/// categorizer.
pub fn evaluate_dataset(bundle: &ModelBundle, rows: &[FeatureRow]) -> Result<Evaluation, WorkflowError> {
    bundle.validate()?;
    let truth = labels_of(rows)?;
    if rows.is_empty() {
        return Err(WorkflowError::Data("dataset is empty".into()));
    }
    let outcomes: Vec<Result<(Detection, Classification), WorkflowError>> =
        par::map_slice(rows, |r| Ok((bundle.detect(&r.features)?, bundle.categorize(&r.features)?)));
    let outcomes: Vec<(Detection, Classification)> = outcomes.into_iter().collect::<Result<_, _>>()?;

    let flagged: Vec<Label> = outcomes
        .iter()
        .map(|(d, c)| if d.anomalous { Label::Attack(c.label) } else { Label::Normal })
        .collect();
    let binary_pred: Vec<Label> = flagged
        .iter()
        .map(|l| if l.is_attack() { Label::Attack(AttackLabel::Ex1) } else { Label::Normal })
        .collect();
    let binary_truth: Vec<Label> = truth
        .iter()
        .map(|l| if l.is_attack() { Label::Attack(AttackLabel::Ex1) } else { Label::Normal })
        .collect();
    let stage1 = crate::detect::evaluate(&binary_pred, &binary_truth)?;

    let attack_idx: Vec<usize> = (0..rows.len()).filter(|&i| truth[i].is_attack()).collect();
    let s2_pred: Vec<Label> = attack_idx.iter().map(|&i| Label::Attack(outcomes[i].1.label)).collect();
    let s2_truth: Vec<Label> = attack_idx.iter().map(|&i| truth[i]).collect();
    let stage2_confusion = ConfusionMatrix::build(&s2_pred, &s2_truth)?;
    let end_to_end_confusion = ConfusionMatrix::build(&flagged, &truth)?;
    Ok(Evaluation {
        report: EvalReport {
            stage1,
            stage2_accuracy: stage2_confusion.accuracy(),
            stage2_macro_accuracy: stage2_confusion.macro_accuracy(),
            stage2_rows: attack_idx.len(),
            end_to_end_accuracy: end_to_end_confusion.accuracy(),
            models_hash: bundle.hash(),
        },
        stage2_confusion,
        end_to_end_confusion,
        scores: outcomes.iter().map(|(d, _)| d.score).collect(),
    })
}
