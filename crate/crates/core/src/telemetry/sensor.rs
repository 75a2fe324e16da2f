use std::collections::{BTreeSet, HashMap, VecDeque};
use std::net::Ipv4Addr;

use super::window::{entropy_from_counts, kl_from_counts, median_of_sorted, SIZE_BINS};
use super::{
    BaselineHistogram, FeatureVector, MacAddr, PacketMeta, SizeBins, TelemetryError,
};

/// Packets kept in the per-peer size window.
pub const SIZE_WINDOW: usize = 1000;

/// Trailing horizon of the rate and source-port counters.
pub const RATE_HORIZON_US: u64 = 60_000_000;

/// Streaming state for one source MAC.
#[derive(Clone, Debug)]
pub struct PeerState {
    pub peer_key: MacAddr,
    size_window: VecDeque<u32>,
    // Same contents as `size_window`, kept sorted for the median.
    sorted_window: Vec<u32>,
    window_sum: u64,
    window_sum_sq: u64,
    bin_counts: [u32; SIZE_BINS],
    pub last_arrival_us: Option<u64>,
    pub max_size_bytes: u32,
    pub max_gap_us: u64,
    recent_arrivals: VecDeque<(u64, u16)>,
    recent_ports: HashMap<u16, u32>,
    pub packet_count: u64,
}

impl PeerState {
    fn new(peer_key: MacAddr) -> Self {
        PeerState {
            peer_key,
            size_window: VecDeque::with_capacity(SIZE_WINDOW),
            sorted_window: Vec::with_capacity(SIZE_WINDOW),
            window_sum: 0,
            window_sum_sq: 0,
            bin_counts: [0; SIZE_BINS],
            last_arrival_us: None,
            max_size_bytes: 0,
            max_gap_us: 0,
            recent_arrivals: VecDeque::new(),
            recent_ports: HashMap::new(),
            packet_count: 0,
        }
    }

    pub fn size_window(&self) -> impl Iterator<Item = u32> + '_ {
        self.size_window.iter().copied()
    }

    pub fn window_len(&self) -> usize {
        self.size_window.len()
    }

    pub fn recent_arrivals(&self) -> impl Iterator<Item = u64> + '_ {
        self.recent_arrivals.iter().map(|&(t, _)| t)
    }

    pub fn recent_port_count(&self) -> usize {
        self.recent_ports.len()
    }

    fn push_size(&mut self, len: u32, bins: &SizeBins) {
        if self.size_window.len() == SIZE_WINDOW {
            let old = self.size_window.pop_front().expect("window is full");
            let at = self
                .sorted_window
                .binary_search(&old)
                .expect("sorted window mirrors the ring buffer");
            self.sorted_window.remove(at);
            self.window_sum -= old as u64;
            self.window_sum_sq -= (old as u64) * (old as u64);
            self.bin_counts[bins.bin_of(old)] -= 1;
        }
        self.size_window.push_back(len);
        let at = self.sorted_window.partition_point(|&v| v <= len);
        self.sorted_window.insert(at, len);
        self.window_sum += len as u64;
        self.window_sum_sq += (len as u64) * (len as u64);
        self.bin_counts[bins.bin_of(len)] += 1;
    }

    fn push_arrival(&mut self, ts: u64, port: u16) {
        self.recent_arrivals.push_back((ts, port));
        *self.recent_ports.entry(port).or_insert(0) += 1;
        let horizon = ts.saturating_sub(RATE_HORIZON_US);
        while let Some(&(t, p)) = self.recent_arrivals.front() {
            if t >= horizon {
                break;
            }
            self.recent_arrivals.pop_front();
            if let Some(c) = self.recent_ports.get_mut(&p) {
                *c -= 1;
                if *c == 0 {
                    self.recent_ports.remove(&p);
                }
            }
        }
    }

    fn moving_stats(&self) -> (f64, f64, f64) {
        let n = self.size_window.len() as u64;
        let mean = self.window_sum as f64 / n as f64;
        // n * sum(x^2) - (sum x)^2 is exact in integers.
        let num = (n as u128) * (self.window_sum_sq as u128)
            - (self.window_sum as u128) * (self.window_sum as u128);
        let variance = num as f64 / ((n as u128) * (n as u128)) as f64;
        (mean, variance, median_of_sorted(&self.sorted_window))
    }
}

/// Sensor-wide state shared by all peers.
#[derive(Clone, Debug, Default)]
pub struct GlobalState {
    pub peers: HashMap<MacAddr, PeerState>,
    pub mac_to_ips: HashMap<MacAddr, BTreeSet<Ipv4Addr>>,
}

impl GlobalState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn peer(&self, mac: &MacAddr) -> Option<&PeerState> {
        self.peers.get(mac)
    }
}

/// Output of one ingest step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub features: FeatureVector,
    /// No baseline histogram existed for this peer, so the divergence metric
    /// was reported as zero.
    pub baseline_absent: bool,
}

/// Computes the 14 metrics for `packet` and folds the packet into the
/// sensor state.
///
/// Counters, windows and running maxima include the current packet; the
/// inter-arrival time is measured from the previous packet of the same peer
/// (zero for a peer's first packet). A rejected packet leaves the state
/// untouched.
pub fn ingest(
    packet: &PacketMeta,
    global: &mut GlobalState,
    baseline: Option<&BaselineHistogram>,
    bins: &SizeBins,
) -> Result<Observation, TelemetryError> {
    packet.validate()?;
    if let Some(prev) = global
        .peers
        .get(&packet.src_mac)
        .and_then(|p| p.last_arrival_us)
    {
        if packet.timestamp_us < prev {
            return Err(TelemetryError::TimestampRegression {
                peer: packet.src_mac,
                previous_us: prev,
                current_us: packet.timestamp_us,
            });
        }
    }

    let ips = global.mac_to_ips.entry(packet.src_mac).or_default();
    ips.insert(packet.src_ip);
    let clients_per_mac = ips.len();

    let peer = global
        .peers
        .entry(packet.src_mac)
        .or_insert_with(|| PeerState::new(packet.src_mac));

    let len = packet.frame_len_bytes;
    let gap = peer
        .last_arrival_us
        .map_or(0, |prev| packet.timestamp_us - prev);
    peer.last_arrival_us = Some(packet.timestamp_us);
    peer.max_size_bytes = peer.max_size_bytes.max(len);
    peer.max_gap_us = peer.max_gap_us.max(gap);
    peer.packet_count += 1;
    peer.push_size(len, bins);
    peer.push_arrival(packet.timestamp_us, packet.src_port);

    let (mean, variance, median) = peer.moving_stats();
    let scaled_inter_arrival = if peer.max_gap_us > 0 {
        gap as f64 / peer.max_gap_us as f64
    } else {
        0.0
    };
    let (kl, baseline_absent) = match baseline {
        Some(base) => (kl_from_counts(base, &peer.bin_counts), false),
        None => (0.0, true),
    };

    let mut features = FeatureVector {
        n_peers: 0.0,
        packet_size_bytes: len as f64,
        protocol_efficiency: packet.payload_len_bytes as f64 / len as f64,
        mean_flow_pps: peer.recent_arrivals.len() as f64 / (RATE_HORIZON_US as f64 / 1e6),
        inter_arrival_us: gap as f64,
        moving_mean_size: mean,
        moving_variance_size: variance,
        moving_median_size: median,
        scaled_size: len as f64 / peer.max_size_bytes as f64,
        scaled_inter_arrival,
        source_port_count: peer.recent_ports.len() as f64,
        clients_per_mac: clients_per_mac as f64,
        size_entropy_bits: entropy_from_counts(&peer.bin_counts),
        kl_divergence_bits: kl,
    };
    features.n_peers = global.peers.len() as f64;
    Ok(Observation {
        features,
        baseline_absent,
    })
}

/// Telemetry sensor: global state plus the frozen per-peer baselines.
#[derive(Clone, Debug, Default)]
pub struct TelemetrySensor {
    state: GlobalState,
    baselines: HashMap<MacAddr, BaselineHistogram>,
    bins: SizeBins,
}

impl TelemetrySensor {
    pub fn new(bins: SizeBins) -> Self {
        TelemetrySensor {
            state: GlobalState::new(),
            baselines: HashMap::new(),
            bins,
        }
    }

    pub fn with_baselines<I>(bins: SizeBins, baselines: I) -> Self
    where
        I: IntoIterator<Item = BaselineHistogram>,
    {
        TelemetrySensor {
            state: GlobalState::new(),
            baselines: baselines.into_iter().map(|b| (b.peer, b)).collect(),
            bins,
        }
    }

    pub fn ingest(&mut self, packet: &PacketMeta) -> Result<Observation, TelemetryError> {
        let baseline = self.baselines.get(&packet.src_mac);
        ingest(packet, &mut self.state, baseline, &self.bins)
    }

    pub fn state(&self) -> &GlobalState {
        &self.state
    }

    pub fn bins(&self) -> &SizeBins {
        &self.bins
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pkt(mac: u8, ts: u64, frame: u32, payload: u32, port: u16) -> PacketMeta {
        PacketMeta {
            timestamp_us: ts,
            src_mac: MacAddr([2, 0, 0, 0, 0, mac]),
            src_ip: Ipv4Addr::new(10, 0, 0, mac),
            src_port: port,
            dst_port: 502,
            frame_len_bytes: frame,
            payload_len_bytes: payload,
            transport: Default::default(),
        }
    }

    #[test]
    fn first_packet_from_a_peer() {
        let mut sensor = TelemetrySensor::default();
        let obs = sensor.ingest(&pkt(1, 5, 100, 60, 40000)).unwrap();
        let f = obs.features;
        assert_eq!(f.protocol_efficiency, 0.6);
        assert_eq!(f.scaled_size, 1.0);
        assert_eq!(f.inter_arrival_us, 0.0);
        assert_eq!(f.scaled_inter_arrival, 0.0);
        assert_eq!(f.n_peers, 1.0);
        assert_eq!(f.clients_per_mac, 1.0);
        assert!(obs.baseline_absent);
        assert_eq!(f.kl_divergence_bits, 0.0);
    }

    #[test]
    fn mean_flow_counts_trailing_minute() {
        let mut sensor = TelemetrySensor::default();
        let mut last = None;
        // 120 packets spread over 59.5 s.
        for i in 0..120u64 {
            last = Some(sensor.ingest(&pkt(1, i * 500_000, 66, 12, 40000)).unwrap());
        }
        assert_eq!(last.unwrap().features.mean_flow_pps, 2.0);
        // Jump ahead so the first 20 fall out of the horizon.
        let obs = sensor
            .ingest(&pkt(1, 119 * 500_000 + 11_000_000, 66, 12, 40001))
            .unwrap();
        // Arrivals at >= 10.5 s remain: indices 21..=119 plus the new one.
        assert_eq!(obs.features.mean_flow_pps, 100.0 / 60.0);
        assert_eq!(obs.features.source_port_count, 2.0);
    }

    #[test]
    fn alternating_window_statistics() {
        let mut sensor = TelemetrySensor::default();
        let mut f = FeatureVector::default();
        for i in 0..1000u64 {
            let len = if i % 2 == 0 { 64 } else { 1500 };
            f = sensor.ingest(&pkt(1, i * 1000, len, 10, 1)).unwrap().features;
        }
        assert_eq!(f.moving_mean_size, 782.0);
        assert_eq!(f.moving_median_size, 782.0);
        assert_eq!(f.moving_variance_size, 515_524.0);
        // Half the window in the first bin, half in the last.
        assert!((f.size_entropy_bits - 1.0).abs() < 1e-12);
    }

    #[test]
    fn window_keeps_only_latest_thousand() {
        let mut sensor = TelemetrySensor::default();
        for i in 0..500u64 {
            sensor.ingest(&pkt(1, i, 1500, 10, 1)).unwrap();
        }
        let mut f = FeatureVector::default();
        for i in 0..1000u64 {
            f = sensor.ingest(&pkt(1, 500 + i, 100, 10, 1)).unwrap().features;
        }
        assert_eq!(f.moving_mean_size, 100.0);
        assert_eq!(f.moving_variance_size, 0.0);
        assert_eq!(f.size_entropy_bits, 0.0);
        // The running max still remembers the early large frames.
        assert!((f.scaled_size - 100.0 / 1500.0).abs() < 1e-15);
        assert_eq!(sensor.state().peer(&MacAddr([2, 0, 0, 0, 0, 1])).unwrap().window_len(), 1000);
    }

    #[test]
    fn scaled_gap_tracks_largest_gap() {
        let mut sensor = TelemetrySensor::default();
        sensor.ingest(&pkt(1, 0, 66, 12, 1)).unwrap();
        let f = sensor.ingest(&pkt(1, 1000, 66, 12, 1)).unwrap().features;
        assert_eq!(f.scaled_inter_arrival, 1.0);
        let f = sensor.ingest(&pkt(1, 1250, 66, 12, 1)).unwrap().features;
        assert_eq!(f.inter_arrival_us, 250.0);
        assert_eq!(f.scaled_inter_arrival, 0.25);
    }

    #[test]
    fn shared_mac_counts_distinct_ips() {
        let mut sensor = TelemetrySensor::default();
        let mut p = pkt(4, 0, 66, 12, 1);
        sensor.ingest(&p).unwrap();
        p.src_ip = Ipv4Addr::new(10, 0, 0, 77);
        p.timestamp_us = 10;
        let f = sensor.ingest(&p).unwrap().features;
        assert_eq!(f.clients_per_mac, 2.0);
        assert_eq!(f.n_peers, 1.0);
    }

    #[test]
    fn rejected_packets_leave_state_untouched() {
        let mut sensor = TelemetrySensor::default();
        sensor.ingest(&pkt(1, 100, 66, 12, 1)).unwrap();
        assert!(matches!(
            sensor.ingest(&pkt(1, 200, 66, 67, 1)),
            Err(TelemetryError::Malformed(_))
        ));
        assert!(matches!(
            sensor.ingest(&pkt(1, 50, 66, 12, 1)),
            Err(TelemetryError::TimestampRegression { .. })
        ));
        assert!(sensor.ingest(&pkt(9, 0, 10, 11, 1)).is_err());
        assert_eq!(sensor.state().peers.len(), 1);
        assert!(!sensor.state().mac_to_ips.contains_key(&MacAddr([2, 0, 0, 0, 0, 9])));
        let peer = sensor.state().peer(&MacAddr([2, 0, 0, 0, 0, 1])).unwrap();
        assert_eq!(peer.packet_count, 1);
        assert_eq!(peer.last_arrival_us, Some(100));
    }

    #[test]
    fn baseline_feeds_divergence() {
        use super::super::fit_baseline;
        let bins = SizeBins::default();
        let training: Vec<_> = (0..200).map(|i| pkt(1, i, 66, 12, 1)).collect();
        let fit = fit_baseline(&training, &bins);
        let mut sensor = TelemetrySensor::with_baselines(bins, fit.baselines.into_values());
        let obs = sensor.ingest(&pkt(1, 0, 1400, 12, 1)).unwrap();
        assert!(!obs.baseline_absent);
        assert!(obs.features.kl_divergence_bits > 1.0);
        let obs = sensor.ingest(&pkt(2, 0, 1400, 12, 1)).unwrap();
        assert!(obs.baseline_absent);
    }
}
