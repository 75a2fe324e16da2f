//! Local Outlier Factor in novelty mode.
//!
//! The model is fitted on benign 2-D embeddings. A query's neighbors are
//! always drawn from the training set; its score is the mean local
//! reachability density (lrd) of those neighbors divided by its own lrd.
//! Scores near 1 mean the query is as dense as its surroundings.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::kdtree::{KdTree, Neighbor};
use super::DetectError;
use crate::par;

/// Upper bound on the local reachability density. Reached when a point and
/// all its neighbors coincide, where the density is formally infinite.
pub const LRD_CAP: f64 = 1e12;

/// Smallest anomaly threshold the calibration will produce.
pub const THRESHOLD_FLOOR: f64 = 1.1;

/// Quantile of benign hold-out scores used as the anomaly threshold.
pub const DEFAULT_QUANTILE: f64 = 0.999;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LofModel {
    pub k: usize,
    /// Scores strictly above this are anomalous.
    pub threshold: f64,
    pub points: Vec<[f64; 2]>,
    pub k_distance: Vec<f64>,
    pub lrd: Vec<f64>,
    /// LOF of each training point against the rest of the training set.
    pub self_scores: Vec<f64>,
    #[serde(skip)]
    index: OnceLock<KdTree>,
}

impl PartialEq for LofModel {
    fn eq(&self, other: &Self) -> bool {
        self.k == other.k
            && self.threshold == other.threshold
            && self.points == other.points
            && self.k_distance == other.k_distance
            && self.lrd == other.lrd
            && self.self_scores == other.self_scores
    }
}

fn lrd_from(reach_sum: f64, k: usize) -> f64 {
    if reach_sum <= 0.0 {
        return LRD_CAP;
    }
    (k as f64 / reach_sum).min(LRD_CAP)
}

/// Fits LOF on benign embeddings with neighborhood size `k`. The threshold
/// starts at [`THRESHOLD_FLOOR`] until calibrated.
pub fn fit_lof(points: &[[f64; 2]], k: usize) -> Result<LofModel, DetectError> {
    if k == 0 {
        return Err(DetectError::InvalidK { k, points: points.len() });
    }
    if points.len() <= k {
        return Err(DetectError::InvalidK { k, points: points.len() });
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(DetectError::NonFinite);
    }
    let tree = KdTree::build(points);
    let neighborhoods: Vec<Vec<Neighbor>> =
        par::map_range(points.len(), |i| tree.nearest(&points[i], k, Some(i)));
    let k_distance: Vec<f64> = neighborhoods
        .iter()
        .map(|nb| nb.last().expect("k >= 1 neighbors").dist())
        .collect();
    let lrd: Vec<f64> = neighborhoods
        .iter()
        .map(|nb| {
            let reach: f64 = nb.iter().map(|n| k_distance[n.index].max(n.dist())).sum();
            lrd_from(reach, k)
        })
        .collect();
    let self_scores: Vec<f64> = neighborhoods
        .iter()
        .zip(&lrd)
        .map(|(nb, &own)| {
            let mean: f64 = nb.iter().map(|n| lrd[n.index]).sum::<f64>() / k as f64;
            mean / own
        })
        .collect();

    let index = OnceLock::new();
    let _ = index.set(tree);
    Ok(LofModel {
        k,
        threshold: THRESHOLD_FLOOR,
        points: points.to_vec(),
        k_distance,
        lrd,
        self_scores,
        index,
    })
}

impl LofModel {
    fn tree(&self) -> &KdTree {
        self.index.get_or_init(|| KdTree::build(&self.points))
    }

    /// Novelty score of `point`. A query that coincides exactly with a
    /// training point gets that point's self-score.
    pub fn score(&self, point: &[f64; 2]) -> f64 {
        let nb = self.tree().nearest(point, self.k, None);
        if let Some(first) = nb.first() {
            if first.dist_sq == 0.0 {
                return self.self_scores[first.index];
            }
        }
        let reach: f64 = nb
            .iter()
            .map(|n| self.k_distance[n.index].max(n.dist()))
            .sum();
        let own = lrd_from(reach, self.k);
        let mean: f64 = nb.iter().map(|n| self.lrd[n.index]).sum::<f64>() / self.k as f64;
        mean / own
    }

    pub fn score_batch(&self, points: &[[f64; 2]]) -> Vec<f64> {
        // Build the index once before fanning out.
        self.tree();
        par::map_slice(points, |p| self.score(p))
    }

    pub fn is_anomalous(&self, score: f64) -> bool {
        score > self.threshold
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn lof_score(model: &LofModel, point: &[f64; 2]) -> f64 {
    model.score(point)
}

/// Linear-interpolated quantile (the "type 7" definition) of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Sets the model threshold to the `quantile` of hold-out benign scores,
/// never below [`THRESHOLD_FLOOR`]. Returns the new threshold.
pub fn calibrate_threshold(
    model: &mut LofModel,
    holdout: &[[f64; 2]],
    q: f64,
) -> Result<f64, DetectError> {
    if holdout.is_empty() {
        return Err(DetectError::EmptyHoldout);
    }
    let scores = model.score_batch(holdout);
    let tau = quantile(&scores, q).max(THRESHOLD_FLOOR);
    model.threshold = tau;
    Ok(tau)
}
