//! Neighborhood-size selection for the LOF detector.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lof::{calibrate_threshold, fit_lof, DEFAULT_QUANTILE};
use super::DetectError;
use crate::par;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub k_values: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
    /// Share of the benign training set used to fit; the rest calibrates.
    pub fit_fraction: f64,
    pub quantile: f64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            k_values: (5..=24).collect(),
            repeats: 20,
            seed: 0,
            fit_fraction: 0.75,
            quantile: DEFAULT_QUANTILE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KStats {
    pub k: usize,
    pub mean_false_negatives: f64,
    pub mean_false_positives: f64,
    pub mean_threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub best_k: usize,
    pub per_k: Vec<KStats>,
}

/// One benign resplit: `(fit, calibration)` index sets.
pub(crate) fn resplit(n: usize, fit_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((n as f64 * fit_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let calib = idx.split_off(cut);
    (idx, calib)
}

/// For each candidate `k`, repeatedly resplits the benign embeddings into
/// fit/calibration parts (seeds `seed + r`), fits and calibrates LOF, and
/// counts errors on the labeled validation set. Picks the `k` with the
/// fewest mean false negatives, then fewest mean false positives, then the
/// smallest `k`.
pub fn tune_k(
    benign: &[[f64; 2]],
    validation: &[([f64; 2], bool)],
    config: &TuneConfig,
) -> Result<TuneReport, DetectError> {
    if config.k_values.is_empty() || config.repeats == 0 {
        return Err(DetectError::InvalidConfig("empty k range or zero repeats".into()));
    }
    let attacks = validation.iter().filter(|(_, a)| *a).count();
    if attacks == 0 || attacks == validation.len() {
        return Err(DetectError::SingleClass);
    }

    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..config.repeats)
        .map(|r| resplit(benign.len(), config.fit_fraction, config.seed.wrapping_add(r as u64)))
        .collect();
    let jobs: Vec<(usize, usize)> = config
        .k_values
        .iter()
        .flat_map(|&k| (0..config.repeats).map(move |r| (k, r)))
        .collect();
    let points: Vec<[f64; 2]> = validation.iter().map(|(p, _)| *p).collect();

    let outcomes: Vec<Result<(usize, usize, f64), DetectError>> = par::map_slice(&jobs, |&(k, r)| {
        let (fit_idx, cal_idx) = &splits[r];
        let fit: Vec<[f64; 2]> = fit_idx.iter().map(|&i| benign[i]).collect();
        let cal: Vec<[f64; 2]> = cal_idx.iter().map(|&i| benign[i]).collect();
        let mut model = fit_lof(&fit, k)?;
        let tau = calibrate_threshold(&mut model, &cal, config.quantile)?;
        let (mut fn_, mut fp) = (0, 0);
        for ((_, is_attack), score) in validation.iter().zip(model.score_batch(&points)) {
            let flagged = score > tau;
            match (flagged, *is_attack) {
                (false, true) => fn_ += 1,
                (true, false) => fp += 1,
                _ => {}
            }
        }
        Ok((fn_, fp, tau))
    });

    let mut per_k = Vec::with_capacity(config.k_values.len());
    for (ki, &k) in config.k_values.iter().enumerate() {
        let (mut sfn, mut sfp, mut stau) = (0.0, 0.0, 0.0);
        for r in 0..config.repeats {
            let (fn_, fp, tau) = outcomes[ki * config.repeats + r].clone()?;
            sfn += fn_ as f64;
            sfp += fp as f64;
            stau += tau;
        }
        let reps = config.repeats as f64;
        per_k.push(KStats {
            k,
            mean_false_negatives: sfn / reps,
            mean_false_positives: sfp / reps,
            mean_threshold: stau / reps,
        });
    }
    let best_k = per_k
        .iter()
        .min_by(|a, b| {
            a.mean_false_negatives
                .total_cmp(&b.mean_false_negatives)
                .then(a.mean_false_positives.total_cmp(&b.mean_false_positives))
                .then(a.k.cmp(&b.k))
        })
        .expect("at least one k")
        .k;
    Ok(TuneReport { best_k, per_k })
}
