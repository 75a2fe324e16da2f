use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded per-class shuffle-and-cut. Returns `(first, second)` index sets
/// where each class contributes `round(fraction * count)` rows to `first`.
/// Both sets are returned in ascending index order.
pub fn stratified_split<L: Ord + Copy>(labels: &[L], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: BTreeMap<L, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (_, mut idx) in by_class {
        idx.shuffle(&mut rng);
        let cut = (idx.len() as f64 * fraction).round() as usize;
        second.extend_from_slice(&idx[cut..]);
        idx.truncate(cut);
        first.extend(idx);
    }
    first.sort_unstable();
    second.sort_unstable();
    (first, second)
}
