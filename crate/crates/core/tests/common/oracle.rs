//! From-scratch reference implementations used to check the library.

use std::collections::{BTreeSet, HashMap};

use nalgebra::{DMatrix, SymmetricEigen};
use plcshield::telemetry::{BaselineHistogram, FeatureVector, PacketMeta, SizeBins, FEATURE_COUNT};

/// Recomputes the feature vector of `packets[k]` from the prefix
/// `packets[..=k]` alone.
pub fn batch_features(
    packets: &[PacketMeta],
    k: usize,
    baselines: &HashMap<plcshield::telemetry::MacAddr, BaselineHistogram>,
    bins: &SizeBins,
) -> FeatureVector {
    let p = &packets[k];
    let prefix = &packets[..=k];
    let mine: Vec<&PacketMeta> = prefix.iter().filter(|q| q.src_mac == p.src_mac).collect();
    let n_peers = prefix.iter().map(|q| q.src_mac).collect::<BTreeSet<_>>().len();
    let ips = mine.iter().map(|q| q.src_ip).collect::<BTreeSet<_>>().len();

    let gaps: Vec<u64> = mine.windows(2).map(|w| w[1].timestamp_us - w[0].timestamp_us).collect();
    let gap = gaps.last().copied().unwrap_or(0);
    let max_gap = gaps.iter().copied().max().unwrap_or(0);
    let max_size = mine.iter().map(|q| q.frame_len_bytes).max().unwrap();

    let horizon = p.timestamp_us.saturating_sub(60_000_000);
    let recent: Vec<&&PacketMeta> = mine.iter().filter(|q| q.timestamp_us >= horizon).collect();
    let ports = recent.iter().map(|q| q.src_port).collect::<BTreeSet<_>>().len();

    let window: Vec<f64> = mine[mine.len().saturating_sub(1000)..]
        .iter()
        .map(|q| q.frame_len_bytes as f64)
        .collect();
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let mut sorted = window.clone();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m % 2 == 1 { sorted[m / 2] } else { (sorted[m / 2 - 1] + sorted[m / 2]) / 2.0 };

    let mut counts = [0.0f64; 5];
    for &x in &window {
        let mut b = 4;
        for (i, edge) in bins.edges[1..5].iter().enumerate() {
            if x < *edge {
                b = i;
                break;
            }
        }
        counts[b] += 1.0;
    }
    let entropy: f64 = counts.iter().filter(|&&c| c > 0.0).map(|&c| -(c / n) * (c / n).log2()).sum();
    let kl = match baselines.get(&p.src_mac) {
        None => 0.0,
        Some(base) => {
            let d: f64 = base
                .probabilities
                .iter()
                .zip(counts)
                .filter(|(&b, _)| b > 0.0)
                .map(|(&b, c)| b * (b / ((c + 1.0) / (n + 5.0))).log2())
                .sum();
            d.max(0.0)
        }
    };

    FeatureVector {
        n_peers: n_peers as f64,
        packet_size_bytes: p.frame_len_bytes as f64,
        protocol_efficiency: p.payload_len_bytes as f64 / p.frame_len_bytes as f64,
        mean_flow_pps: recent.len() as f64 / 60.0,
        inter_arrival_us: gap as f64,
        moving_mean_size: mean,
        moving_variance_size: var,
        moving_median_size: median,
        scaled_size: p.frame_len_bytes as f64 / max_size as f64,
        scaled_inter_arrival: if max_gap > 0 { gap as f64 / max_gap as f64 } else { 0.0 },
        source_port_count: ports as f64,
        clients_per_mac: ips as f64,
        size_entropy_bits: entropy.max(0.0),
        kl_divergence_bits: kl,
    }
}

/// Index of the first feature where `a` and `b` disagree beyond `rel`
/// relative tolerance. Count-valued features must match exactly.
pub fn feature_mismatch(a: &FeatureVector, b: &FeatureVector, rel: f64) -> Option<usize> {
    const COUNTS: [usize; 6] = [0, 1, 4, 10, 11, 3];
    let (a, b) = (a.to_array(), b.to_array());
    (0..FEATURE_COUNT).find(|&i| {
        if COUNTS.contains(&i) {
            a[i] != b[i]
        } else {
            !close(a[i], b[i], rel)
        }
    })
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Quadratic-time LOF: `(k_distance, lrd)` of the training set and the
/// novelty score of each query.
pub fn lof_oracle(train: &[[f64; 2]], k: usize, queries: &[[f64; 2]]) -> Vec<f64> {
    let n = train.len();
    let knn = |q: &[f64; 2], skip: Option<usize>| -> Vec<(f64, usize)> {
        let mut d: Vec<(f64, usize)> = (0..n).filter(|&j| Some(j) != skip).map(|j| (dist(q, &train[j]), j)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0));
        d.truncate(k);
        d
    };
    let neigh: Vec<Vec<(f64, usize)>> = (0..n).map(|i| knn(&train[i], Some(i))).collect();
    let kdist: Vec<f64> = neigh.iter().map(|nb| nb[k - 1].0).collect();
    let lrd_of = |nb: &[(f64, usize)]| k as f64 / nb.iter().map(|&(d, j)| d.max(kdist[j])).sum::<f64>();
    let lrd: Vec<f64> = neigh.iter().map(|nb| lrd_of(nb)).collect();
    queries
        .iter()
        .map(|q| {
            let nb = knn(q, None);
            nb.iter().map(|&(_, j)| lrd[j]).sum::<f64>() / k as f64 / lrd_of(&nb)
        })
        .collect()
}

/// Eigenvalues (descending) and matching unit eigenvectors of the sample
/// covariance, from a dense symmetric eigensolver.
pub fn pca_oracle(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let n = rows.len();
    let d = rows[0].len();
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).mean()).collect();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order.iter().map(|&i| eig.eigenvectors.column(i).iter().copied().collect()).collect();
    (values, vectors, mean)
}
