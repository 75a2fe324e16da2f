//! Batch statistics over a packet-size window: moving mean/variance/median,
//! binned size entropy, and divergence from a benign baseline histogram.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{MacAddr, PacketMeta, TelemetryError};

/// Number of size bins used by the entropy and divergence metrics.
pub const SIZE_BINS: usize = 5;

/// Largest standard Ethernet frame; upper edge of the size bins.
pub const ETHERNET_FRAME_CEILING: f64 = 1518.0;

/// Minimum packets a peer needs before a baseline is fitted for it.
pub const MIN_BASELINE_PACKETS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowStats {
    pub mean: f64,
    pub variance: f64,
    pub median: f64,
}

/// Population mean, population variance and median of a window of frame
/// lengths. Even-length windows take the mean of the two middle values.
pub fn window_stats(window: &[u32]) -> Result<WindowStats, TelemetryError> {
    if window.is_empty() {
        return Err(TelemetryError::EmptyWindow);
    }
    let n = window.len() as f64;
    let mean = window.iter().map(|&v| v as f64).sum::<f64>() / n;
    let variance = window
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let mut sorted = window.to_vec();
    sorted.sort_unstable();
    Ok(WindowStats {
        mean,
        variance,
        median: median_of_sorted(&sorted),
    })
}

pub(crate) fn median_of_sorted(sorted: &[u32]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
    }
}

/// Edges of the five packet-size bins.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeBins {
    pub edges: [f64; SIZE_BINS + 1],
}

impl Default for SizeBins {
    /// Equal-width bins over `[0, 1518]` bytes.
    fn default() -> Self {
        let width = ETHERNET_FRAME_CEILING / SIZE_BINS as f64;
        let mut edges = [0.0; SIZE_BINS + 1];
        for (i, e) in edges.iter_mut().enumerate() {
            *e = width * i as f64;
        }
        edges[SIZE_BINS] = ETHERNET_FRAME_CEILING;
        SizeBins { edges }
    }
}

impl SizeBins {
    pub fn new(edges: [f64; SIZE_BINS + 1]) -> Result<Self, TelemetryError> {
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(TelemetryError::InvalidBins);
        }
        Ok(SizeBins { edges })
    }

    /// Bins are half-open `[lo, hi)`; lengths below the first edge fall in
    /// the first bin and lengths at or above the last interior edge
    /// (including jumbo frames) fall in the last.
    pub fn bin_of(&self, len: u32) -> usize {
        let x = len as f64;
        (1..SIZE_BINS)
            .position(|b| x < self.edges[b])
            .unwrap_or(SIZE_BINS - 1)
    }

    pub fn counts(&self, window: &[u32]) -> [u32; SIZE_BINS] {
        let mut counts = [0u32; SIZE_BINS];
        for &len in window {
            counts[self.bin_of(len)] += 1;
        }
        counts
    }
}

/// Shannon entropy in bits of the binned size distribution. Empty bins
/// contribute nothing.
pub fn size_entropy(window: &[u32], bins: &SizeBins) -> Result<f64, TelemetryError> {
    if window.is_empty() {
        return Err(TelemetryError::EmptyWindow);
    }
    Ok(entropy_from_counts(&bins.counts(window)))
}

pub(crate) fn entropy_from_counts(counts: &[u32; SIZE_BINS]) -> f64 {
    let total: u32 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let h = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>();
    // A single occupied bin yields -0.0 on some paths.
    h.max(0.0)
}

/// Add-one smoothed relative frequencies; every bin ends up strictly positive.
pub(crate) fn smoothed(counts: &[u32; SIZE_BINS]) -> [f64; SIZE_BINS] {
    let total = counts.iter().sum::<u32>() as f64 + SIZE_BINS as f64;
    let mut p = [0.0; SIZE_BINS];
    for (slot, &c) in p.iter_mut().zip(counts) {
        *slot = (c as f64 + 1.0) / total;
    }
    p
}

/// Per-peer benign packet-size histogram.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineHistogram {
    pub peer: MacAddr,
    pub bin_edges: [f64; SIZE_BINS + 1],
    pub probabilities: [f64; SIZE_BINS],
}

impl BaselineHistogram {
    pub fn bins(&self) -> SizeBins {
        SizeBins {
            edges: self.bin_edges,
        }
    }
}

/// Divergence of the current window from a baseline, in bits, with the
/// baseline as the weighting distribution:
/// `sum_b base(b) * log2(base(b) / current(b))`.
/// The current window is add-one smoothed.
pub fn kl_divergence(base: &BaselineHistogram, window: &[u32]) -> Result<f64, TelemetryError> {
    if window.is_empty() {
        return Err(TelemetryError::EmptyWindow);
    }
    Ok(kl_from_counts(base, &base.bins().counts(window)))
}

pub(crate) fn kl_from_counts(base: &BaselineHistogram, counts: &[u32; SIZE_BINS]) -> f64 {
    let current = smoothed(counts);
    let d = base
        .probabilities
        .iter()
        .zip(current.iter())
        .map(|(&p, &q)| if p > 0.0 { p * (p / q).log2() } else { 0.0 })
        .sum::<f64>();
    d.max(0.0)
}

/// Result of fitting per-peer baselines.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineFit {
    pub baselines: BTreeMap<MacAddr, BaselineHistogram>,
    /// Peers seen with fewer than [`MIN_BASELINE_PACKETS`] packets.
    pub excluded: Vec<(MacAddr, usize)>,
}

pub fn fit_baseline(packets: &[PacketMeta], bins: &SizeBins) -> BaselineFit {
    let mut counts: BTreeMap<MacAddr, ([u32; SIZE_BINS], usize)> = BTreeMap::new();
    for p in packets {
        let entry = counts.entry(p.src_mac).or_insert(([0; SIZE_BINS], 0));
        entry.0[bins.bin_of(p.frame_len_bytes)] += 1;
        entry.1 += 1;
    }
    let mut fit = BaselineFit::default();
    for (peer, (c, n)) in counts {
        if n < MIN_BASELINE_PACKETS {
            fit.excluded.push((peer, n));
            continue;
        }
        fit.baselines.insert(
            peer,
            BaselineHistogram {
                peer,
                bin_edges: bins.edges,
                probabilities: smoothed(&c),
            },
        );
    }
    fit
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::Ipv4Addr;

    #[test]
    fn constant_window() {
        let s = window_stats(&[100, 100, 100]).unwrap();
        assert_eq!((s.mean, s.variance, s.median), (100.0, 0.0, 100.0));
    }

    #[test]
    fn four_element_window() {
        let s = window_stats(&[1, 2, 3, 4]).unwrap();
        assert_eq!((s.mean, s.variance, s.median), (2.5, 1.25, 2.5));
    }

    #[test]
    fn singleton_and_empty_window() {
        let s = window_stats(&[10]).unwrap();
        assert_eq!((s.mean, s.variance, s.median), (10.0, 0.0, 10.0));
        assert!(matches!(window_stats(&[]), Err(TelemetryError::EmptyWindow)));
    }

    #[test]
    fn default_bins_are_equal_width() {
        let bins = SizeBins::default();
        assert_eq!(bins.edges[0], 0.0);
        assert_eq!(bins.edges[5], 1518.0);
        assert!((bins.edges[1] - 303.6).abs() < 1e-12);
        assert_eq!(bins.bin_of(0), 0);
        assert_eq!(bins.bin_of(303), 0);
        assert_eq!(bins.bin_of(304), 1);
        assert_eq!(bins.bin_of(1517), 4);
        assert_eq!(bins.bin_of(9000), 4);
        assert!(SizeBins::new([0.0, 1.0, 1.0, 2.0, 3.0, 4.0]).is_err());
    }

    #[test]
    fn entropy_uniform_degenerate_and_skewed() {
        let bins = SizeBins::default();
        let uniform = [100, 400, 700, 1000, 1300];
        let h = size_entropy(&uniform, &bins).unwrap();
        assert!((h - 5f64.log2()).abs() < 1e-12);
        assert!((h - 2.3219).abs() < 1e-4);

        assert_eq!(size_entropy(&[64; 50], &bins).unwrap(), 0.0);

        let mut skewed = vec![64u32; 6];
        skewed.extend([400, 400, 700, 700]);
        let expected = -(0.6f64 * 0.6f64.log2() + 2.0 * 0.2 * 0.2f64.log2());
        let h = size_entropy(&skewed, &bins).unwrap();
        assert!((h - expected).abs() < 1e-12);
        assert!((h - 1.3710).abs() < 1e-4);
    }

    fn baseline(probabilities: [f64; SIZE_BINS]) -> BaselineHistogram {
        BaselineHistogram {
            peer: MacAddr([2, 0, 0, 0, 0, 1]),
            bin_edges: SizeBins::default().edges,
            probabilities,
        }
    }

    #[test]
    fn kl_of_matching_distribution_is_zero() {
        // A window of 45 sizes split 10/5/5/15/5 smooths to 11/6/6/16/6 over 45.
        let mut window = vec![100u32; 10];
        window.extend([400; 5]);
        window.extend([700; 5]);
        window.extend([1000; 15]);
        window.extend([1300; 5]);
        let base = baseline([11.0 / 45.0, 6.0 / 45.0, 6.0 / 45.0, 16.0 / 45.0, 6.0 / 45.0]);
        assert!(kl_divergence(&base, &window).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kl_matches_term_by_term_summation() {
        let eps = 1e-3;
        let mass = (1.0 - 3.0 * eps) / 2.0;
        let base = baseline([mass, mass, eps, eps, eps]);
        let window = vec![64u32; 20];
        // Oracle: smoothed current = (21, 1, 1, 1, 1) / 25.
        let q = [21.0 / 25.0, 1.0 / 25.0, 1.0 / 25.0, 1.0 / 25.0, 1.0 / 25.0];
        let mut oracle = 0.0;
        for b in 0..SIZE_BINS {
            oracle += base.probabilities[b] * (base.probabilities[b] / q[b]).log2();
        }
        let d = kl_divergence(&base, &window).unwrap();
        assert!((d - oracle).abs() < 1e-12, "{d} vs {oracle}");
        assert!(d > 0.0);
    }

    fn packet(mac: u8, len: u32, ts: u64) -> PacketMeta {
        PacketMeta {
            timestamp_us: ts,
            src_mac: MacAddr([2, 0, 0, 0, 0, mac]),
            src_ip: Ipv4Addr::new(10, 0, 0, mac),
            src_port: 40000,
            dst_port: 502,
            frame_len_bytes: len,
            payload_len_bytes: 0,
            transport: Default::default(),
        }
    }

    #[test]
    fn baseline_concentrated_in_one_bin() {
        let packets: Vec<_> = (0..1000).map(|i| packet(1, 64, i)).collect();
        let fit = fit_baseline(&packets, &SizeBins::default());
        let h = &fit.baselines[&MacAddr([2, 0, 0, 0, 0, 1])];
        let delta = 1.0 / 1005.0;
        assert!((h.probabilities[0] - (1.0 - 4.0 * delta)).abs() < 1e-12);
        for p in &h.probabilities[1..] {
            assert!((p - delta).abs() < 1e-12);
        }
        assert!((h.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn baseline_keys_by_mac_and_excludes_sparse_peers() {
        let mut packets: Vec<_> = (0..150).map(|i| packet(1, 64, i)).collect();
        packets.extend((0..120).map(|i| packet(2, 900, i)));
        packets.extend((0..99).map(|i| packet(3, 900, i)));
        let fit = fit_baseline(&packets, &SizeBins::default());
        assert_eq!(fit.baselines.len(), 2);
        assert_eq!(fit.excluded, vec![(MacAddr([2, 0, 0, 0, 0, 3]), 99)]);
    }

    #[test]
    fn baseline_of_uniform_sizes_is_flat() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let packets: Vec<_> = (0..10_000)
            .map(|i| packet(1, rng.random_range(0..=1518), i))
            .collect();
        let fit = fit_baseline(&packets, &SizeBins::default());
        for p in fit.baselines.values().next().unwrap().probabilities {
            assert!((p - 0.2).abs() < 0.03, "{p}");
        }
    }
}
