use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::scenario::{gen_traffic, ScenarioSpec, TrafficTrace};
use super::SimlabError;
use crate::detect::{AttackLabel, Label};
use crate::telemetry::{fit_baseline, BaselineHistogram, FeatureRow, SizeBins, TelemetrySensor};

/// Feature rows with labels plus per-label counts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledDataset {
    pub rows: Vec<FeatureRow>,
    pub counts: BTreeMap<Label, usize>,
}

impl LabeledDataset {
    pub fn from_rows(rows: Vec<FeatureRow>) -> Self {
        let mut counts = BTreeMap::new();
        for r in &rows {
            *counts.entry(r.label.unwrap_or(Label::Normal)).or_insert(0) += 1;
        }
        LabeledDataset { rows, counts }
    }

    pub fn normal_count(&self) -> usize {
        self.counts.get(&Label::Normal).copied().unwrap_or(0)
    }

    pub fn attack_count(&self) -> usize {
        self.rows.len() - self.normal_count()
    }

    /// Plain-text per-label summary.
    pub fn summary_table(&self, name: &str) -> String {
        let mut s = format!("{:<12}{:>10}\n", name, "rows");
        for label in Label::ALL {
            let n = self.counts.get(&label).copied().unwrap_or(0);
            let _ = writeln!(s, "{:<12}{:>10}", label.as_str(), n);
        }
        let _ = writeln!(s, "{:<12}{:>10}", "total", self.rows.len());
        s
    }
}

/// Runs a fresh sensor over `trace` and returns one row per record at or
/// after `skip_before_us`. Rows before it still update sensor state.
pub fn extract_features(
    trace: &TrafficTrace,
    baselines: &[BaselineHistogram],
    skip_before_us: u64,
) -> Result<Vec<FeatureRow>, SimlabError> {
    let mut sensor = TelemetrySensor::with_baselines(SizeBins::default(), baselines.iter().cloned());
    let mut rows = Vec::with_capacity(trace.records.len());
    for r in &trace.records {
        let obs = sensor.ingest(&r.packet())?;
        if r.ts_us >= skip_before_us {
            rows.push(FeatureRow {
                timestamp_us: r.ts_us,
                peer: r.src_mac,
                features: obs.features,
                label: r.label,
            });
        }
    }
    Ok(rows)
}

/// Extracts every trace with its own sensor and concatenates the rows.
pub fn make_dataset(
    traces: &[TrafficTrace],
    baselines: &[BaselineHistogram],
    warmup_us: u64,
) -> Result<LabeledDataset, SimlabError> {
    let mut rows = Vec::new();
    for t in traces {
        rows.extend(extract_features(t, baselines, warmup_us)?);
    }
    Ok(LabeledDataset::from_rows(rows))
}

/// Packets per peer used to fit a size baseline.
pub const BASELINE_PACKETS: usize = 2000;

/// Per-peer size baselines from the first [`BASELINE_PACKETS`] messages of
/// each peer in a benign capture. Equal sample sizes keep the smoothing mass
/// identical across peers with the same traffic mix.
pub fn fit_trace_baselines(trace: &TrafficTrace) -> Vec<BaselineHistogram> {
    let mut seen: BTreeMap<_, usize> = BTreeMap::new();
    let packets: Vec<_> = trace
        .records
        .iter()
        .filter(|r| {
            let n = seen.entry(r.src_mac).or_insert(0);
            *n += 1;
            *n <= BASELINE_PACKETS
        })
        .map(|r| r.packet())
        .collect();
    fit_baseline(&packets, &SizeBins::default())
        .baselines
        .into_values()
        .collect()
}

/// Desk-scale corpus: a benign-only capture (Dataset I), a labeled capture
/// set for training (Dataset II) and an independently seeded external set
/// (Dataset III). II and III each hold a fresh benign capture plus one
/// capture per attack.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub seed: u64,
    pub benign: ScenarioSpec,
    /// Attack specs; each gets its own benign background. Seeds are offset
    /// per dataset so II and III are independent.
    pub attacks: Vec<ScenarioSpec>,
}

impl CorpusConfig {
    pub fn desk(seed: u64) -> Self {
        CorpusConfig {
            seed,
            benign: ScenarioSpec::benign(seed),
            attacks: AttackLabel::ALL
                .iter()
                .map(|&l| ScenarioSpec::attack(l, seed))
                .collect(),
        }
    }

    /// Multiplies row volumes by `factor` (1.0 = desk scale).
    pub fn scaled(mut self, factor: f64) -> Self {
        let f = factor.max(0.01);
        let b = &mut self.benign;
        b.duration_s = b.warmup_s + (b.duration_s - b.warmup_s) * f;
        for a in &mut self.attacks {
            a.attack_packets = ((a.attack_packets as f64) * f).round().max(1.0) as usize;
            a.duration_s = a.warmup_s + (a.duration_s - a.warmup_s) * f.max(1.0);
        }
        self
    }
}

pub struct Corpus {
    pub baselines: Vec<BaselineHistogram>,
    pub benign: LabeledDataset,
    pub labeled: LabeledDataset,
    pub external: LabeledDataset,
    pub benign_trace: TrafficTrace,
}

/// A benign capture plus one capture per attack spec, seeded from
/// `config.seed + offset`.
fn labeled_traces(config: &CorpusConfig, offset: u64) -> Result<Vec<TrafficTrace>, SimlabError> {
    let base = config.seed.wrapping_add(offset);
    let mut benign = config.benign.clone();
    benign.rng_seed = base;
    let mut traces = vec![gen_traffic(&benign)?];
    for (i, spec) in config.attacks.iter().enumerate() {
        let mut s = spec.clone();
        s.rng_seed = base.wrapping_add(1 + i as u64);
        traces.push(gen_traffic(&s)?);
    }
    Ok(traces)
}

pub fn build_corpus(config: &CorpusConfig) -> Result<Corpus, SimlabError> {
    let mut benign_spec = config.benign.clone();
    benign_spec.rng_seed = config.seed;
    let benign_trace = gen_traffic(&benign_spec)?;
    let baselines = fit_trace_baselines(&benign_trace);
    let warmup = (benign_spec.warmup_s * 1e6) as u64;
    let benign = make_dataset(std::slice::from_ref(&benign_trace), &baselines, warmup)?;
    let labeled_warmup = config
        .attacks
        .iter()
        .map(|s| (s.warmup_s * 1e6) as u64)
        .fold(warmup, u64::min);
    let labeled = make_dataset(&labeled_traces(config, 1_000)?, &baselines, labeled_warmup)?;
    let external = make_dataset(&labeled_traces(config, 2_000)?, &baselines, labeled_warmup)?;
    Ok(Corpus {
        baselines,
        benign,
        labeled,
        external,
        benign_trace,
    })
}
