use serde::{Deserialize, Serialize};

/// Number of telemetry metrics per inspected packet.
pub const FEATURE_COUNT: usize = 14;

/// Canonical feature names, in column order. These are also the names used
/// by the feature CSV and by persisted feature selections.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "n_peers",
    "packet_size",
    "protocol_efficiency",
    "mean_flow",
    "inter_arrival_us",
    "mov_mean",
    "mov_var",
    "mov_median",
    "scaled_size",
    "scaled_dt",
    "src_ports",
    "clients_per_mac",
    "entropy_bits",
    "kl_bits",
];

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|&n| n == name)
}

/// The 14 header-level telemetry metrics computed for one packet.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Distinct source MACs seen so far.
    pub n_peers: f64,
    pub packet_size_bytes: f64,
    /// Payload bytes over frame bytes.
    pub protocol_efficiency: f64,
    /// Packets from this peer in the trailing 60 s, per second.
    pub mean_flow_pps: f64,
    pub inter_arrival_us: f64,
    pub moving_mean_size: f64,
    pub moving_variance_size: f64,
    pub moving_median_size: f64,
    /// Frame length over the largest frame seen from this peer.
    pub scaled_size: f64,
    /// Inter-arrival time over the largest gap seen from this peer.
    pub scaled_inter_arrival: f64,
    /// Distinct source ports in the trailing 60 s.
    pub source_port_count: f64,
    /// Distinct IPv4 addresses presented by this MAC.
    pub clients_per_mac: f64,
    pub size_entropy_bits: f64,
    pub kl_divergence_bits: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.n_peers,
            self.packet_size_bytes,
            self.protocol_efficiency,
            self.mean_flow_pps,
            self.inter_arrival_us,
            self.moving_mean_size,
            self.moving_variance_size,
            self.moving_median_size,
            self.scaled_size,
            self.scaled_inter_arrival,
            self.source_port_count,
            self.clients_per_mac,
            self.size_entropy_bits,
            self.kl_divergence_bits,
        ]
    }

    pub fn from_array(a: [f64; FEATURE_COUNT]) -> Self {
        FeatureVector {
            n_peers: a[0],
            packet_size_bytes: a[1],
            protocol_efficiency: a[2],
            mean_flow_pps: a[3],
            inter_arrival_us: a[4],
            moving_mean_size: a[5],
            moving_variance_size: a[6],
            moving_median_size: a[7],
            scaled_size: a[8],
            scaled_inter_arrival: a[9],
            source_port_count: a[10],
            clients_per_mac: a[11],
            size_entropy_bits: a[12],
            kl_divergence_bits: a[13],
        }
    }
}
