//! Random forest of CART trees grown on Gini impurity.
//!
//! Each tree trains on a bootstrap sample and considers `floor(sqrt(d))`
//! random features per split. Trees are grown until their nodes are pure or
//! hold fewer than two samples. Every tree draws from its own seed-derived
//! RNG stream, so training is deterministic regardless of thread count.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AttackLabel, DetectError};
use crate::par;

pub const DEFAULT_TREES: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub seed: u64,
    /// Features examined per split; `None` means `floor(sqrt(d))`.
    pub max_features: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: DEFAULT_TREES,
            seed: 0,
            max_features: None,
        }
    }
}

impl ForestConfig {
    pub fn with_seed(seed: u64) -> Self {
        ForestConfig {
            seed,
            ..Default::default()
        }
    }
}

/// One row of a tree's flat node table. Internal nodes carry a split;
/// leaves carry per-class sample counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub feature: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub left: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub right: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub votes: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    /// Index of the class this tree votes for. Ties go to the lower class.
    pub fn predict(&self, row: &[f64]) -> usize {
        let mut at = 0;
        loop {
            let node = &self.nodes[at];
            match (node.feature, node.threshold, node.left, node.right) {
                (Some(f), Some(t), Some(l), Some(r)) => {
                    at = if row[f] <= t { l } else { r };
                }
                _ => return argmax_first(&node.votes),
            }
        }
    }
}

fn argmax_first(votes: &[u32]) -> usize {
    let mut best = 0;
    for (i, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub seed: u64,
    pub feature_names: Vec<String>,
    /// Classes seen in training, in tie-break order.
    pub classes: Vec<AttackLabel>,
    pub trees: Vec<DecisionTree>,
    /// Mean decrease in Gini impurity per feature, averaged over trees.
    pub importances: Vec<f64>,
    /// Out-of-bag misclassification rate, if any row was ever out of bag.
    pub oob_error: Option<f64>,
}

/// Predicted class plus the fraction of trees voting for each class.
#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub label: AttackLabel,
    /// Aligned with [`ForestModel::classes`].
    pub vote_fractions: Vec<f64>,
}

struct TreeFit {
    tree: DecisionTree,
    importances: Vec<f64>,
    in_bag: Vec<bool>,
}

fn tree_seed(seed: u64, tree: usize) -> u64 {
    // splitmix64 finalizer over (seed, tree index).
    let mut z = seed ^ (tree as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn train_forest(
    rows: &[Vec<f64>],
    labels: &[AttackLabel],
    feature_names: &[String],
    config: &ForestConfig,
) -> Result<ForestModel, DetectError> {
    if rows.is_empty() {
        return Err(DetectError::EmptyTrainingSet);
    }
    if rows.len() != labels.len() {
        return Err(DetectError::LengthMismatch {
            left: rows.len(),
            right: labels.len(),
        });
    }
    let d = feature_names.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(DetectError::Arity {
            expected: d,
            got: bad.len(),
        });
    }
    if config.n_trees == 0 {
        return Err(DetectError::InvalidConfig("forest needs at least one tree".into()));
    }
    let mut classes: Vec<AttackLabel> = labels.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(DetectError::SingleClass);
    }
    let y: Vec<usize> = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("class list built from labels"))
        .collect();
    let mtry = config
        .max_features
        .unwrap_or_else(|| (d as f64).sqrt().floor() as usize)
        .clamp(1, d.max(1));

    let grower = Grower {
        rows,
        y: &y,
        n_classes: classes.len(),
        n_features: d,
        mtry,
    };
    let fits: Vec<TreeFit> = par::map_range(config.n_trees, |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(config.seed, t));
        grower.grow(&mut rng)
    });

    let mut importances = vec![0.0; d];
    for fit in &fits {
        let total: f64 = fit.importances.iter().sum();
        if total > 0.0 {
            for (acc, v) in importances.iter_mut().zip(&fit.importances) {
                *acc += v / total;
            }
        }
    }
    for v in &mut importances {
        *v /= fits.len() as f64;
    }

    let oob_error = oob_error(&fits, rows, &y, classes.len());
    Ok(ForestModel {
        seed: config.seed,
        feature_names: feature_names.to_vec(),
        classes,
        trees: fits.into_iter().map(|f| f.tree).collect(),
        importances,
        oob_error,
    })
}

fn oob_error(fits: &[TreeFit], rows: &[Vec<f64>], y: &[usize], n_classes: usize) -> Option<f64> {
    let mut scored = 0usize;
    let mut wrong = 0usize;
    for (i, row) in rows.iter().enumerate() {
        let mut votes = vec![0u32; n_classes];
        let mut any = false;
        for fit in fits.iter().filter(|f| !f.in_bag[i]) {
            votes[fit.tree.predict(row)] += 1;
            any = true;
        }
        if any {
            scored += 1;
            if argmax_first(&votes) != y[i] {
                wrong += 1;
            }
        }
    }
    (scored > 0).then(|| wrong as f64 / scored as f64)
}

struct Grower<'a> {
    rows: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    n_features: usize,
    mtry: usize,
}

struct Split {
    feature: usize,
    threshold: f64,
    impurity_decrease: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

fn gini(counts: &[u32], n: u32) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n;
            p * p
        })
        .sum::<f64>()
}

impl Grower<'_> {
    fn grow(&self, rng: &mut ChaCha8Rng) -> TreeFit {
        let n = self.rows.len();
        let mut in_bag = vec![false; n];
        let sample: Vec<usize> = (0..n)
            .map(|_| {
                let i = rng.random_range(0..n);
                in_bag[i] = true;
                i
            })
            .collect();
        let mut nodes = Vec::new();
        let mut importances = vec![0.0; self.n_features];
        // Explicit stack of (node id, sample indices).
        nodes.push(TreeNode {
            feature: None,
            threshold: None,
            left: None,
            right: None,
            votes: Vec::new(),
        });
        let mut stack = vec![(0usize, sample)];
        while let Some((id, idx)) = stack.pop() {
            let counts = self.class_counts(&idx);
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let split = if pure || idx.len() < 2 {
                None
            } else {
                self.best_split(&idx, &counts, rng)
            };
            match split {
                None => nodes[id].votes = counts,
                Some(s) => {
                    importances[s.feature] += s.impurity_decrease * idx.len() as f64 / n as f64;
                    let left_id = nodes.len();
                    let right_id = left_id + 1;
                    for _ in 0..2 {
                        nodes.push(TreeNode {
                            feature: None,
                            threshold: None,
                            left: None,
                            right: None,
                            votes: Vec::new(),
                        });
                    }
                    let node = &mut nodes[id];
                    node.feature = Some(s.feature);
                    node.threshold = Some(s.threshold);
                    node.left = Some(left_id);
                    node.right = Some(right_id);
                    stack.push((right_id, s.right));
                    stack.push((left_id, s.left));
                }
            }
        }
        TreeFit {
            tree: DecisionTree { nodes },
            importances,
            in_bag,
        }
    }

    fn class_counts(&self, idx: &[usize]) -> Vec<u32> {
        let mut counts = vec![0u32; self.n_classes];
        for &i in idx {
            counts[self.y[i]] += 1;
        }
        counts
    }

    /// Examines random features until `mtry` of them offered a valid
    /// partition (or all features are exhausted) and keeps the best one.
    fn best_split(&self, idx: &[usize], counts: &[u32], rng: &mut ChaCha8Rng) -> Option<Split> {
        let n = idx.len() as u32;
        let parent = gini(counts, n);
        let mut features: Vec<usize> = (0..self.n_features).collect();
        features.shuffle(rng);

        let mut best: Option<(usize, f64, f64)> = None;
        let mut examined = 0;
        let mut order: Vec<usize> = idx.to_vec();
        for &f in &features {
            if examined >= self.mtry {
                break;
            }
            order.sort_by(|&a, &b| self.rows[a][f].total_cmp(&self.rows[b][f]));
            let first = self.rows[order[0]][f];
            let last = self.rows[order[order.len() - 1]][f];
            if first == last {
                continue;
            }
            examined += 1;
            let mut left = vec![0u32; self.n_classes];
            let mut right = counts.to_vec();
            for pos in 0..order.len() - 1 {
                let c = self.y[order[pos]];
                left[c] += 1;
                right[c] -= 1;
                let here = self.rows[order[pos]][f];
                let next = self.rows[order[pos + 1]][f];
                if here == next {
                    continue;
                }
                let nl = pos as u32 + 1;
                let nr = n - nl;
                let child = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
                let decrease = parent - child;
                if best.is_none_or(|(_, _, d)| decrease > d) {
                    let mut threshold = here + (next - here) / 2.0;
                    if threshold >= next {
                        threshold = here;
                    }
                    best = Some((f, threshold, decrease));
                }
            }
        }

        let (feature, threshold, impurity_decrease) = best?;
        let (left, right): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.rows[i][feature] <= threshold);
        Some(Split {
            feature,
            threshold,
            impurity_decrease: impurity_decrease.max(0.0),
            left,
            right,
        })
    }
}

impl ForestModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Majority vote across trees; ties go to the earliest class in
    /// [`AttackLabel`] order.
    pub fn classify(&self, row: &[f64]) -> Result<Classification, DetectError> {
        if row.len() != self.n_features() {
            return Err(DetectError::Arity {
                expected: self.n_features(),
                got: row.len(),
            });
        }
        let mut votes = vec![0u32; self.classes.len()];
        for tree in &self.trees {
            votes[tree.predict(row)] += 1;
        }
        Ok(self.resolve(&votes))
    }

    fn resolve(&self, votes: &[u32]) -> Classification {
        let total: u32 = votes.iter().sum();
        Classification {
            label: self.classes[argmax_first(votes)],
            vote_fractions: votes.iter().map(|&v| v as f64 / total as f64).collect(),
        }
    }

    pub fn predict_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<AttackLabel>, DetectError> {
        par::map_slice(rows, |r| self.classify(r).map(|c| c.label))
            .into_iter()
            .collect()
    }
}

pub fn classify(model: &ForestModel, row: &[f64]) -> Result<Classification, DetectError> {
    model.classify(row)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(d: usize) -> Vec<String> {
        (0..d).map(|i| format!("f{i}")).collect()
    }

    #[test]
    fn single_class_and_empty_input_are_rejected() {
        let rows = vec![vec![1.0], vec![2.0]];
        let cfg = ForestConfig::with_seed(1);
        assert!(matches!(
            train_forest(&rows, &[AttackLabel::Ex1; 2], &names(1), &cfg),
            Err(DetectError::SingleClass)
        ));
        assert!(matches!(
            train_forest(&[], &[], &names(1), &cfg),
            Err(DetectError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn separable_on_one_feature() {
        let rows: Vec<Vec<f64>> = (0..60).map(|i| vec![i as f64, ((i * 7) % 5) as f64]).collect();
        let labels: Vec<AttackLabel> = (0..60)
            .map(|i| if i < 30 { AttackLabel::Ex2 } else { AttackLabel::Ex7 })
            .collect();
        let m = train_forest(&rows, &labels, &names(2), &ForestConfig::with_seed(3)).unwrap();
        assert_eq!(m.trees.len(), 200);
        let pred = m.predict_batch(&rows).unwrap();
        assert_eq!(pred, labels);
        assert!(m.oob_error.unwrap() < 0.05);
        for tree in &m.trees {
            for node in &tree.nodes {
                if let Some(f) = node.feature {
                    assert!(f < 2);
                } else {
                    assert!(node.votes.iter().sum::<u32>() > 0);
                }
            }
        }
    }

    #[test]
    fn identical_seed_gives_identical_model() {
        let rows: Vec<Vec<f64>> = (0..80)
            .map(|i| vec![(i % 9) as f64, (i % 4) as f64, (i * 13 % 11) as f64])
            .collect();
        let labels: Vec<AttackLabel> = (0..80).map(|i| AttackLabel::ALL[i % 3]).collect();
        let cfg = ForestConfig::with_seed(99);
        let a = train_forest(&rows, &labels, &names(3), &cfg).unwrap();
        let b = train_forest(&rows, &labels, &names(3), &cfg).unwrap();
        let c = par::sequential(|| train_forest(&rows, &labels, &names(3), &cfg).unwrap());
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn vote_fractions_sum_to_one_and_ties_go_low() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let labels: Vec<AttackLabel> = (0..40)
            .map(|i| if i % 2 == 0 { AttackLabel::Ex3 } else { AttackLabel::Ex6 })
            .collect();
        let m = train_forest(&rows, &labels, &names(1), &ForestConfig::with_seed(5)).unwrap();
        for x in [0.5, 7.2, 39.0, 100.0] {
            let c = m.classify(&[x]).unwrap();
            assert!((c.vote_fractions.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let tie = m.resolve(&[100, 100]);
        assert_eq!(tie.label, AttackLabel::Ex3);
        assert_eq!(tie.vote_fractions, vec![0.5, 0.5]);
        assert!(m.classify(&[1.0, 2.0]).is_err());
    }
}
