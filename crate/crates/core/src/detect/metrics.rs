use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DetectError, Label};

/// Binary detection metrics with attacks as the positive class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    pub mcc: f64,
    /// Names of metrics whose denominator was zero and were reported as 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<String>,
}

impl Metrics {
    pub fn from_counts(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        let mut degenerate = Vec::new();
        let mut ratio = |name: &str, num: f64, den: f64| {
            if den > 0.0 {
                num / den
            } else {
                degenerate.push(name.to_string());
                0.0
            }
        };
        let (tpf, tnf, fpf, fnf) = (tp as f64, tn as f64, fp as f64, fn_ as f64);
        let accuracy = ratio("accuracy", tpf + tnf, tpf + tnf + fpf + fnf);
        let precision = ratio("precision", tpf, tpf + fpf);
        let recall = ratio("recall", tpf, tpf + fnf);
        let specificity = ratio("specificity", tnf, tnf + fpf);
        let f1 = ratio("f1", 2.0 * tpf, 2.0 * tpf + fpf + fnf);
        let den = ((tpf + fpf) * (tpf + fnf) * (tnf + fpf) * (tnf + fnf)).sqrt();
        let mcc = ratio("mcc", tpf * tnf - fpf * fnf, den).clamp(-1.0, 1.0);
        Metrics {
            tp,
            tn,
            fp,
            fn_,
            accuracy,
            precision,
            recall,
            specificity,
            f1,
            mcc,
            degenerate,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn false_positive_rate(&self) -> f64 {
        let negatives = self.tn + self.fp;
        if negatives == 0 {
            0.0
        } else {
            self.fp as f64 / negatives as f64
        }
    }
}

/// Binary confusion counts over predicted and true labels. Every attack
/// label counts as positive.
pub fn evaluate(predictions: &[Label], truth: &[Label]) -> Result<Metrics, DetectError> {
    if predictions.len() != truth.len() {
        return Err(DetectError::LengthMismatch {
            left: predictions.len(),
            right: truth.len(),
        });
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (p, t) in predictions.iter().zip(truth) {
        match (p.is_attack(), t.is_attack()) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(Metrics::from_counts(tp, tn, fp, fn_))
}

/// Multiclass confusion matrix keyed by (truth, prediction).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub cells: BTreeMap<Label, BTreeMap<Label, u64>>,
}

impl ConfusionMatrix {
    pub fn build(predictions: &[Label], truth: &[Label]) -> Result<Self, DetectError> {
        if predictions.len() != truth.len() {
            return Err(DetectError::LengthMismatch {
                left: predictions.len(),
                right: truth.len(),
            });
        }
        let mut cm = ConfusionMatrix::default();
        for (p, t) in predictions.iter().zip(truth) {
            *cm.cells.entry(*t).or_default().entry(*p).or_insert(0) += 1;
        }
        Ok(cm)
    }

    pub fn labels(&self) -> Vec<Label> {
        let mut all: Vec<Label> = self
            .cells
            .iter()
            .flat_map(|(t, row)| std::iter::once(*t).chain(row.keys().copied()))
            .collect();
        all.sort();
        all.dedup();
        all
    }

    pub fn accuracy(&self) -> f64 {
        let total: u64 = self.cells.values().flat_map(|r| r.values()).sum();
        let hit: u64 = self
            .cells
            .iter()
            .map(|(t, row)| row.get(t).copied().unwrap_or(0))
            .sum();
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }

    /// Mean per-class recall over the classes present in the truth.
    pub fn macro_accuracy(&self) -> f64 {
        let recalls: Vec<f64> = self
            .cells
            .iter()
            .map(|(t, row)| {
                let n: u64 = row.values().sum();
                row.get(t).copied().unwrap_or(0) as f64 / n as f64
            })
            .collect();
        if recalls.is_empty() {
            0.0
        } else {
            recalls.iter().sum::<f64>() / recalls.len() as f64
        }
    }

    /// `truth,<label>...` header followed by one row per true label.
    pub fn to_csv(&self) -> String {
        let labels = self.labels();
        let mut out = String::from("truth");
        for l in &labels {
            out.push(',');
            out.push_str(l.as_str());
        }
        out.push('\n');
        for t in &labels {
            out.push_str(t.as_str());
            for p in &labels {
                let v = self
                    .cells
                    .get(t)
                    .and_then(|r| r.get(p))
                    .copied()
                    .unwrap_or(0);
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}
