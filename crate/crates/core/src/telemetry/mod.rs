//! Header-level packet sensor. Turns per-packet L2–L4 metadata into the 14
//! telemetry metrics consumed by the detectors.

mod csv;
mod features;
mod packet;
mod sensor;
mod window;

pub use self::csv::{read_feature_csv, write_feature_csv, FeatureRow, FEATURE_CSV_HEADER};
pub use features::{feature_index, FeatureVector, FEATURE_COUNT, FEATURE_NAMES};
pub use packet::{MacAddr, PacketMeta, Transport};
pub use sensor::{
    ingest, GlobalState, Observation, PeerState, TelemetrySensor, RATE_HORIZON_US, SIZE_WINDOW,
};
pub use window::{
    fit_baseline, kl_divergence, size_entropy, window_stats, BaselineFit, BaselineHistogram,
    SizeBins, WindowStats, ETHERNET_FRAME_CEILING, MIN_BASELINE_PACKETS, SIZE_BINS,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("malformed packet: {0}")]
    Malformed(String),
    #[error("timestamp went backwards for peer {peer}: {current_us} < {previous_us}")]
    TimestampRegression {
        peer: MacAddr,
        previous_us: u64,
        current_us: u64,
    },
    #[error("statistics requested over an empty window")]
    EmptyWindow,
    #[error("bin edges must be strictly increasing")]
    InvalidBins,
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
