//! Scenario laboratory: a stub Modbus controller, seeded benign and attack
//! traffic generators, labeled dataset construction, and the latency and
//! flood-mitigation experiments run against a live relay.

mod dataset;
mod experiments;
pub mod modbus;
mod scenario;

pub use dataset::{
    build_corpus, extract_features, fit_trace_baselines, make_dataset, Corpus, CorpusConfig,
    LabeledDataset, BASELINE_PACKETS,
};
pub use experiments::{
    bench_latency, flood_experiment, BenchReport, BenchRow, FloodReport, FloodRow, FloodSweep, ATTACKER_IP,
    BENCH_CYCLES, FLOOD_SOCKET_CAP, FLOOD_TIMEOUT,
};
pub use modbus::StubController;
pub use scenario::{
    benign_ip, benign_mac, flood_frame, gen_traffic, ScenarioSpec, TraceRecord, TrafficTrace,
    MODBUS_PORT,
};

use thiserror::Error;

use crate::telemetry::TelemetryError;

#[derive(Debug, Error)]
pub enum SimlabError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("bad trace: {0}")]
    Trace(String),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
