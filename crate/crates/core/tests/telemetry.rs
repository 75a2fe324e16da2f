mod common;

use std::collections::HashMap;
use std::io::BufReader;

use common::oracle::{batch_features, feature_mismatch};
use common::{fuzz_baselines, fuzz_packets};
use plcshield::telemetry::{
    read_feature_csv, write_feature_csv, FeatureRow, MacAddr, PacketMeta, SizeBins, TelemetrySensor,
};
use proptest::prelude::*;

fn run(packets: &[PacketMeta], seed: u64, peers: usize) -> Vec<plcshield::telemetry::FeatureVector> {
    let mut sensor = TelemetrySensor::with_baselines(SizeBins::default(), fuzz_baselines(seed, peers));
    packets.iter().map(|p| sensor.ingest(p).unwrap().features).collect()
}

fn peer(i: u8) -> MacAddr {
    MacAddr([2, 0, 0, 0, 0, i])
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn streaming_matches_batch(seed in any::<u64>(), n in 1usize..1500, peers in 1usize..=5) {
        let packets = fuzz_packets(seed, n, peers);
        let base: HashMap<_, _> = fuzz_baselines(seed, peers).into_iter().map(|b| (b.peer, b)).collect();
        let streamed = run(&packets, seed, peers);
        for k in 0..packets.len() {
            let want = batch_features(&packets, k, &base, &SizeBins::default());
            prop_assert_eq!(feature_mismatch(&streamed[k], &want, 1e-9), None, "packet {}", k);
        }
    }

    #[test]
    fn moving_stats_forget_old_traffic(seed in any::<u64>(), extra in 0usize..600) {
        let tail: Vec<PacketMeta> = fuzz_packets(seed, 1000 + extra, 1);
        let start = tail[0].timestamp_us;
        let mut old = fuzz_packets(seed ^ 1, 300, 1);
        let last_old = old.last().unwrap().timestamp_us;
        for p in &mut old {
            p.timestamp_us = p.timestamp_us * start / (last_old + 1);
        }
        let a = *run(&tail, seed, 0).last().unwrap();
        let mut both = old;
        both.extend(tail);
        let b = *run(&both, seed, 0).last().unwrap();
        prop_assert_eq!(a.moving_mean_size, b.moving_mean_size);
        prop_assert_eq!(a.moving_variance_size, b.moving_variance_size);
        prop_assert_eq!(a.moving_median_size, b.moving_median_size);
    }

    #[test]
    fn rate_counters_see_only_the_last_minute(seed in any::<u64>(), n in 1usize..300) {
        let mut recent = fuzz_packets(seed, n, 1);
        for p in &mut recent {
            p.timestamp_us = p.timestamp_us % 50_000_000 + 200_000_000;
        }
        recent.sort_by_key(|p| p.timestamp_us);
        let first = recent[0].timestamp_us;
        let last = recent.last().unwrap().timestamp_us;
        let mut old = fuzz_packets(seed ^ 2, 100, 1);
        let horizon = last - 60_000_000;
        for (i, p) in old.iter_mut().enumerate() {
            p.timestamp_us = (horizon - 1).min(first) * i as u64 / 100;
            p.src_port = 1 + i as u16;
        }
        let a = *run(&recent, seed, 0).last().unwrap();
        let mut both = old;
        both.extend(recent);
        let b = *run(&both, seed, 0).last().unwrap();
        prop_assert_eq!(a.mean_flow_pps, b.mean_flow_pps);
        prop_assert_eq!(a.source_port_count, b.source_port_count);
    }

    #[test]
    fn bounded_metrics(seed in any::<u64>(), n in 1usize..800, peers in 1usize..=5) {
        let packets = fuzz_packets(seed, n, peers);
        let out = run(&packets, seed, peers);
        let mut max: HashMap<MacAddr, u32> = HashMap::new();
        for (p, f) in packets.iter().zip(&out) {
            let m = max.entry(p.src_mac).or_insert(0);
            let grew = p.frame_len_bytes >= *m;
            *m = (*m).max(p.frame_len_bytes);
            prop_assert!(f.scaled_size <= 1.0 && f.scaled_size > 0.0);
            prop_assert_eq!(f.scaled_size == 1.0, grew);
            prop_assert!((0.0..=1.0).contains(&f.scaled_inter_arrival));
            prop_assert!(f.size_entropy_bits >= 0.0 && f.size_entropy_bits <= 5f64.log2() + 1e-12);
            prop_assert!(f.kl_divergence_bits >= 0.0);
            prop_assert!((0.0..=1.0).contains(&f.protocol_efficiency));
        }
    }

    #[test]
    fn peers_are_isolated(seed in any::<u64>(), n in 1usize..600, noise in 1usize..600) {
        let a: Vec<PacketMeta> = fuzz_packets(seed, n, 1);
        let mut b = fuzz_packets(seed ^ 3, noise, 1);
        for p in &mut b {
            p.src_mac = peer(9);
            p.src_ip = std::net::Ipv4Addr::new(10, 9, 9, 9);
        }
        let alone = run(&a, seed, 0);
        let mut mixed: Vec<PacketMeta> = a.iter().chain(&b).cloned().collect();
        mixed.sort_by_key(|p| p.timestamp_us);
        let together = run(&mixed, seed, 0);
        let from_a: Vec<_> = mixed.iter().zip(together).filter(|(p, _)| p.src_mac == peer(0)).map(|(_, f)| f).collect();
        prop_assert_eq!(from_a.len(), alone.len());
        for (x, y) in alone.iter().zip(&from_a) {
            let (mut x, mut y) = (x.to_array(), y.to_array());
            // Only the peer count is sensor-wide.
            x[0] = 0.0;
            y[0] = 0.0;
            prop_assert_eq!(x, y);
        }
    }

    #[test]
    fn feature_csv_round_trips(seed in any::<u64>(), n in 1usize..100) {
        let packets = fuzz_packets(seed, n, 3);
        let rows: Vec<FeatureRow> = packets
            .iter()
            .zip(run(&packets, seed, 3))
            .map(|(p, f)| FeatureRow { timestamp_us: p.timestamp_us, peer: p.src_mac, features: f, label: None })
            .collect();
        let mut buf = Vec::new();
        write_feature_csv(&mut buf, &rows, false).unwrap();
        let back = read_feature_csv(BufReader::new(&buf[..])).unwrap();
        prop_assert_eq!(back, rows);
    }
}

#[test]
fn timestamp_regression_is_rejected_without_side_effects() {
    let packets = fuzz_packets(1, 50, 1);
    let mut sensor = TelemetrySensor::new(SizeBins::default());
    for p in &packets {
        sensor.ingest(p).unwrap();
    }
    let mut late = packets.last().unwrap().clone();
    late.timestamp_us = late.timestamp_us.saturating_sub(1_000_000);
    if late.timestamp_us < packets.last().unwrap().timestamp_us {
        let before = sensor.state().peer(&late.src_mac).unwrap().packet_count;
        assert!(sensor.ingest(&late).is_err());
        assert_eq!(sensor.state().peer(&late.src_mac).unwrap().packet_count, before);
    }
}
