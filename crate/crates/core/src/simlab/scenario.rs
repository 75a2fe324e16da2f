//! Seeded traffic generators for benign polling and the six attack
//! scenarios. Traces are client-to-controller Modbus/TCP messages with the
//! header metadata the sensor consumes.

use std::io::{BufRead, Write};
use std::net::Ipv4Addr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use super::modbus::{self, adu};
use super::SimlabError;
use crate::detect::{AttackLabel, Label};
use crate::relay::SYNTHETIC_HEADER_BYTES;
use crate::telemetry::{MacAddr, PacketMeta, Transport};

pub const MODBUS_PORT: u16 = 502;

/// Parameters of one generated capture. Attack scenarios run the attacker
/// over a benign background of `peer_count` polling clients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: Label,
    pub duration_s: f64,
    /// Leading interval during which only benign clients run; dataset
    /// extraction discards rows from it while per-peer state fills up.
    pub warmup_s: f64,
    pub peer_count: usize,
    pub poll_interval_ms: f64,
    /// EX-7 application message size in bytes.
    pub packet_size_bytes: u32,
    /// EX-7 concurrent sender streams.
    pub thread_count: usize,
    /// Upper bound on attacker messages.
    pub attack_packets: usize,
    pub rng_seed: u64,
}

impl ScenarioSpec {
    pub fn benign(seed: u64) -> Self {
        ScenarioSpec {
            kind: Label::Normal,
            duration_s: 720.0,
            warmup_s: 300.0,
            peer_count: 6,
            poll_interval_ms: 250.5,
            packet_size_bytes: 1200,
            thread_count: 500,
            attack_packets: 500,
            rng_seed: seed,
        }
    }

    pub fn attack(label: AttackLabel, seed: u64) -> Self {
        ScenarioSpec {
            kind: Label::Attack(label),
            duration_s: 500.0,
            ..Self::benign(seed)
        }
    }

    pub fn validate(&self) -> Result<(), SimlabError> {
        let bad = |m: &str| Err(SimlabError::InvalidSpec(m.to_string()));
        if !(self.duration_s > 0.0) || !(self.warmup_s >= 0.0) || self.warmup_s >= self.duration_s {
            return bad("need duration_s > warmup_s >= 0");
        }
        if !(self.poll_interval_ms > 0.0) {
            return bad("poll_interval_ms must be positive");
        }
        if self.kind == Label::Attack(AttackLabel::Ex7) {
            if !(200..=2000).contains(&self.packet_size_bytes) {
                return bad("EX-7 packet_size_bytes must lie in [200, 2000]");
            }
            if self.thread_count == 0 {
                return bad("EX-7 needs at least one thread");
            }
        }
        if self.kind == Label::Attack(AttackLabel::Ex4) && self.peer_count == 0 {
            return bad("EX-4 needs a benign peer whose MAC it can reuse");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub ts_us: u64,
    pub src_mac: MacAddr,
    pub src_ip: Ipv4Addr,
    pub src_port: u16,
    pub frame_len: u32,
    pub payload_len: u32,
    pub payload_hex: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

impl TraceRecord {
    pub fn packet(&self) -> PacketMeta {
        PacketMeta {
            timestamp_us: self.ts_us,
            src_mac: self.src_mac,
            src_ip: self.src_ip,
            src_port: self.src_port,
            dst_port: MODBUS_PORT,
            frame_len_bytes: self.frame_len,
            payload_len_bytes: self.payload_len,
            transport: Transport::Tcp,
        }
    }

    pub fn payload(&self) -> Result<Vec<u8>, SimlabError> {
        hex::decode(&self.payload_hex).map_err(|e| SimlabError::Trace(e.to_string()))
    }
}

/// Time-ordered capture. Records at equal timestamps keep generation order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrafficTrace {
    pub records: Vec<TraceRecord>,
}

impl TrafficTrace {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), SimlabError> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, SimlabError> {
        let mut records = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: TraceRecord = serde_json::from_str(&line)
                .map_err(|e| SimlabError::Trace(format!("line {}: {e}", i + 1)))?;
            records.push(r);
        }
        Ok(TrafficTrace { records })
    }

    pub fn packets(&self) -> Vec<PacketMeta> {
        self.records.iter().map(TraceRecord::packet).collect()
    }

    pub fn count(&self, label: Label) -> usize {
        self.records
            .iter()
            .filter(|r| r.label.unwrap_or(Label::Normal) == label)
            .count()
    }
}

struct Source {
    mac: MacAddr,
    ip: Ipv4Addr,
    label: Label,
}

struct Builder {
    events: Vec<(u64, usize, TraceRecord)>,
    tid: u16,
}

impl Builder {
    fn emit(&mut self, ts_us: u64, src: &Source, port: u16, pdu: &[u8]) {
        self.emit_with_header(ts_us, src, port, pdu, SYNTHETIC_HEADER_BYTES);
    }

    fn emit_with_header(&mut self, ts_us: u64, src: &Source, port: u16, pdu: &[u8], header: u32) {
        self.tid = self.tid.wrapping_add(1);
        let bytes = adu(self.tid, pdu);
        self.push_frame(ts_us, src, port, bytes, header);
    }

    fn push_raw(&mut self, ts_us: u64, src: &Source, port: u16, bytes: Vec<u8>) {
        self.push_frame(ts_us, src, port, bytes, SYNTHETIC_HEADER_BYTES);
    }

    fn push_frame(&mut self, ts_us: u64, src: &Source, port: u16, bytes: Vec<u8>, header: u32) {
        let seq = self.events.len();
        self.events.push((
            ts_us,
            seq,
            TraceRecord {
                ts_us,
                src_mac: src.mac,
                src_ip: src.ip,
                src_port: port,
                frame_len: bytes.len() as u32 + header,
                payload_len: bytes.len() as u32,
                payload_hex: hex::encode(&bytes),
                label: Some(src.label),
            },
        ));
    }

    /// Timestamp of the latest message from `mac` at or before `ts_us`.
    fn last_from(&self, mac: MacAddr, ts_us: u64) -> Option<u64> {
        self.events
            .iter()
            .filter(|(ts, _, r)| r.src_mac == mac && *ts <= ts_us)
            .map(|(ts, _, _)| *ts)
            .max()
    }

    fn finish(mut self) -> TrafficTrace {
        self.events.sort_by_key(|(ts, seq, _)| (*ts, *seq));
        TrafficTrace {
            records: self.events.into_iter().map(|(_, _, r)| r).collect(),
        }
    }
}

fn us(seconds: f64) -> u64 {
    (seconds * 1e6).round().max(0.0) as u64
}

pub fn benign_mac(i: usize) -> MacAddr {
    MacAddr([0x00, 0x1d, 0x9c, 0xc0, 0x00, (i + 1) as u8])
}

pub fn benign_ip(i: usize) -> Ipv4Addr {
    Ipv4Addr::new(192, 168, 10, (11 + i) as u8)
}

fn attacker(label: AttackLabel) -> Source {
    let n = AttackLabel::ALL.iter().position(|&l| l == label).unwrap() as u8;
    Source {
        mac: MacAddr([0x00, 0x0c, 0x29, 0xa7, 0x00, 0x10 + n]),
        ip: Ipv4Addr::new(192, 168, 10, 200 + n),
        label: Label::Attack(label),
    }
}

fn ephemeral(rng: &mut ChaCha8Rng) -> u16 {
    rng.random_range(49152..=65535)
}

/// Registers in the recipe block an HMI writes every [`RECIPE_PERIOD`]
/// cycles.
const RECIPE_REGISTERS: usize = 120;
/// Cycles between recipe writes. Divides the 1000-packet size window, so a
/// full window always holds the same size multiset.
const RECIPE_PERIOD: u64 = 20;

/// Benign HMI poll table: reads in rotation, a coil write and a register
/// write (all 12-byte ADUs), and one recipe block write per 20 cycles.
fn benign_request(peer: usize, cycle: u64) -> Vec<u8> {
    match cycle % RECIPE_PERIOD {
        0 => {
            let regs: Vec<u16> = (0..RECIPE_REGISTERS as u16).map(|j| j.wrapping_mul(31)).collect();
            modbus::write_multiple_registers(1000, &regs)
        }
        10 => modbus::write_single_register(40 + peer as u16, cycle as u16),
        5 => modbus::write_single_coil(peer as u16, cycle % 40 < 20),
        c => match c % 4 {
            0 => modbus::read_request(modbus::READ_HOLDING_REGISTERS, 0, 10),
            1 => modbus::read_request(modbus::READ_COILS, 0, 16),
            2 => modbus::read_request(modbus::READ_INPUT_REGISTERS, 0, 8),
            _ => modbus::read_request(modbus::READ_DISCRETE_INPUTS, 0, 16),
        },
    }
}

/// Idle time, in poll periods, between a client's first request and the
/// start of its poll loop.
const SESSION_IDLE_PERIODS: f64 = 2.0;
/// Cycles between operator screen refreshes on one client.
const REFRESH_PERIOD: u64 = 1000;
/// Polls over which the scheduler drifts back onto its grid after a refresh.
const REFRESH_RELAX: u32 = 15;

/// Poll timing: sends are scheduled on a fixed grid and leave with 5%
/// jitter. A screen refresh pulls one poll 0.6 to 0.9 periods early; the
/// schedule then returns to the grid over [`REFRESH_RELAX`] polls.
fn gen_benign(spec: &ScenarioSpec, b: &mut Builder, rng: &mut ChaCha8Rng) {
    let period = spec.poll_interval_ms * 1e-3;
    let jitter = Normal::new(0.0, 0.05 * period).expect("finite jitter");
    for peer in 0..spec.peer_count {
        let src = Source {
            mac: benign_mac(peer),
            ip: benign_ip(peer),
            label: Label::Normal,
        };
        let port = ephemeral(rng);
        let first = rng.random_range(0.0..period);
        b.emit(us(first), &src, port, &benign_request(peer, 0));
        let grid0 = first + SESSION_IDLE_PERIODS * period;
        let phase = rng.random_range(0..REFRESH_PERIOD);
        let mut lead = 0.0;
        let mut step = 0.0;
        let mut last = first;
        for cycle in 1u64.. {
            let slot = grid0 + (cycle - 1) as f64 * period;
            if slot >= spec.duration_s {
                break;
            }
            if (cycle + phase) % REFRESH_PERIOD == 0 {
                lead = period * rng.random_range(0.6..0.9);
                step = lead / REFRESH_RELAX as f64;
            } else {
                lead = (lead - step).max(0.0);
            }
            let t = (slot - lead + jitter.sample(rng)).max(last + 0.01 * period);
            b.emit(us(t), &src, port, &benign_request(peer, cycle));
            last = t;
        }
    }
}

/// TCP timestamp option length, padding included.
const TCP_TIMESTAMP_OPTION: u32 = 12;

fn gen_attack(label: AttackLabel, spec: &ScenarioSpec, b: &mut Builder, rng: &mut ChaCha8Rng) {
    let period = spec.poll_interval_ms * 1e-3;
    let mut src = attacker(label);
    let mut t = spec.warmup_s + rng.random_range(1.0..5.0);
    let mut sent = 0;
    let budget = spec.attack_packets;
    let end = spec.duration_s;
    match label {
        // Bursts of fresh sessions probing the device, then silence while
        // the man in the middle blackholes responses.
        AttackLabel::Ex1 => {
            while sent < budget && t < end {
                let burst = rng.random_range(15..=25);
                for _ in 0..burst.min(budget - sent) {
                    b.emit(us(t), &src, ephemeral(rng), &[0x2B, 0x0E, 0x01, 0x00]);
                    sent += 1;
                    t += rng.random_range(0.002..0.010);
                }
                t += rng.random_range(2.5..3.5);
            }
        }
        // Forged sensor values pushed as block register writes.
        AttackLabel::Ex2 => {
            let port = ephemeral(rng);
            while sent < budget && t < end {
                let n = rng.random_range(20..=40);
                let regs: Vec<u16> = (0..n).map(|_| rng.random()).collect();
                b.emit(us(t), &src, port, &modbus::write_multiple_registers(200, &regs));
                sent += 1;
                t += period / rng.random_range(3.0..10.0);
            }
        }
        // Forged actuator commands: coil writes at an elevated rate.
        AttackLabel::Ex3 => {
            let port = ephemeral(rng);
            while sent < budget && t < end {
                let pdu = if rng.random_bool(0.5) {
                    modbus::write_single_coil(rng.random_range(0..32), rng.random())
                } else {
                    let n = rng.random_range(8..=64);
                    let coils: Vec<bool> = (0..n).map(|_| rng.random()).collect();
                    modbus::write_multiple_coils(0, &coils)
                };
                b.emit(us(t), &src, port, &pdu);
                sent += 1;
                t += period / rng.random_range(3.0..10.0);
            }
        }
        // A second host answering to a benign client's MAC, replaying its
        // reads with irregular timing. Its own TCP stack adds the 12-byte
        // timestamp option to every segment.
        AttackLabel::Ex4 => {
            src.mac = benign_mac(0);
            // Replays begin right after an observed victim request.
            if let Some(seen) = b.last_from(src.mac, us(t)) {
                t = seen as f64 * 1e-6 + rng.random_range(0.005..0.05);
            }
            let port = ephemeral(rng);
            while sent < budget && t < end {
                let fc = if rng.random_bool(0.5) {
                    modbus::READ_HOLDING_REGISTERS
                } else {
                    modbus::READ_INPUT_REGISTERS
                };
                let pdu = modbus::read_request(fc, 0, 10);
                b.emit_with_header(us(t), &src, port, &pdu, SYNTHETIC_HEADER_BYTES + TCP_TIMESTAMP_OPTION);
                sent += 1;
                t += period * rng.random_range(0.05..0.35);
            }
        }
        // Bursts of writes, each from a fresh source port.
        AttackLabel::Ex6 => {
            while sent < budget && t < end {
                let burst = rng.random_range(10..=20);
                for _ in 0..burst.min(budget - sent) {
                    let pdu = if rng.random_bool(0.4) {
                        modbus::write_single_register(rng.random_range(0..64), rng.random())
                    } else {
                        let n = rng.random_range(1..=20);
                        let regs: Vec<u16> = (0..n).map(|_| rng.random()).collect();
                        modbus::write_multiple_registers(rng.random_range(0..64), &regs)
                    };
                    b.emit(us(t), &src, ephemeral(rng), &pdu);
                    sent += 1;
                    t += rng.random_range(0.001..0.005);
                }
                t += rng.random_range(1.5..2.5);
            }
        }
        // Many concurrent streams of oversized frames.
        AttackLabel::Ex7 => {
            let mut ports: Vec<u16> = (0..spec.thread_count).map(|_| ephemeral(rng)).collect();
            ports.shuffle(rng);
            let gap = Exp::new(spec.thread_count as f64 * 20.0).expect("positive rate");
            while sent < budget && t < end {
                let bytes = flood_frame(sent as u16, spec.packet_size_bytes as usize, rng);
                b.push_raw(us(t), &src, ports[sent % ports.len()], bytes);
                sent += 1;
                t += gap.sample(rng);
            }
        }
    }
}

/// A syntactically valid MBAP frame of exactly `size` bytes carrying
/// random register data.
pub fn flood_frame(tid: u16, size: usize, rng: &mut impl Rng) -> Vec<u8> {
    let size = size.max(8);
    let mut out = Vec::with_capacity(size);
    out.extend_from_slice(&tid.to_be_bytes());
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&((size - 6) as u16).to_be_bytes());
    out.push(1);
    out.push(modbus::WRITE_MULTIPLE_REGISTERS);
    out.extend((8..size).map(|_| rng.random::<u8>()));
    out
}

/// Generates the capture for `spec`. Identical specs give identical traces.
///
/// Attack captures stop at the attacker's last message.
pub fn gen_traffic(spec: &ScenarioSpec) -> Result<TrafficTrace, SimlabError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut b = Builder {
        events: Vec::new(),
        tid: 0,
    };
    gen_benign(spec, &mut b, &mut rng);
    let Label::Attack(label) = spec.kind else {
        return Ok(b.finish());
    };
    let mut arng = ChaCha8Rng::seed_from_u64(spec.rng_seed ^ 0xA77A_C4E5);
    gen_attack(label, spec, &mut b, &mut arng);
    let mut trace = b.finish();
    let kind = Some(Label::Attack(label));
    if let Some(stop) = trace.records.iter().rev().find(|r| r.label == kind).map(|r| r.ts_us) {
        trace.records.retain(|r| r.ts_us <= stop);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benign_rate_matches_poll_interval() {
        let spec = ScenarioSpec {
            duration_s: 90.0,
            warmup_s: 0.0,
            peer_count: 3,
            ..ScenarioSpec::benign(1)
        };
        let trace = gen_traffic(&spec).unwrap();
        for peer in 0..3 {
            let n = trace
                .records
                .iter()
                .filter(|r| r.src_mac == benign_mac(peer) && r.ts_us >= 30_000_000)
                .count();
            assert!((238..=242).contains(&n), "peer {peer}: {n}");
        }
        assert!(trace.records.windows(2).all(|w| w[0].ts_us <= w[1].ts_us));
    }

    #[test]
    fn generation_is_deterministic() {
        for label in AttackLabel::ALL {
            let spec = ScenarioSpec::attack(label, 5);
            assert_eq!(gen_traffic(&spec).unwrap(), gen_traffic(&spec).unwrap());
        }
        let a = gen_traffic(&ScenarioSpec::attack(AttackLabel::Ex2, 5)).unwrap();
        let b = gen_traffic(&ScenarioSpec::attack(AttackLabel::Ex2, 6)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn records_are_consistent_modbus() {
        for label in AttackLabel::ALL {
            let trace = gen_traffic(&ScenarioSpec::attack(label, 2)).unwrap();
            let attacker_ip = attacker(label).ip;
            let sent = trace.records.iter().filter(|r| r.src_ip == attacker_ip).count();
            assert_eq!(sent, 500, "{label}");
            assert_eq!(trace.records.last().unwrap().src_ip, attacker_ip, "{label}");
            for r in &trace.records {
                let bytes = r.payload().unwrap();
                assert_eq!(bytes.len() as u32, r.payload_len);
                let header = if label == AttackLabel::Ex4 && r.src_ip == attacker_ip { 66 } else { 54 };
                assert_eq!(r.frame_len, r.payload_len + header);
                assert_eq!(u16::from_be_bytes([bytes[4], bytes[5]]) as usize + 6, bytes.len());
                r.packet().validate().unwrap();
            }
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let trace = gen_traffic(&ScenarioSpec {
            duration_s: 10.0,
            warmup_s: 1.0,
            ..ScenarioSpec::attack(AttackLabel::Ex6, 3)
        })
        .unwrap();
        let mut buf = Vec::new();
        trace.write_jsonl(&mut buf).unwrap();
        let back = TrafficTrace::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, trace);
        let first = String::from_utf8(buf).unwrap().lines().next().unwrap().to_string();
        for key in ["ts_us", "src_mac", "src_ip", "src_port", "frame_len", "payload_len", "payload_hex"] {
            assert!(first.contains(&format!("\"{key}\"")), "{key}");
        }
    }

    #[test]
    fn ex7_spec_bounds() {
        let mut spec = ScenarioSpec::attack(AttackLabel::Ex7, 1);
        spec.packet_size_bytes = 199;
        assert!(gen_traffic(&spec).is_err());
        spec.packet_size_bytes = 2000;
        let t = gen_traffic(&spec).unwrap();
        let flood: Vec<_> = t.records.iter().filter(|r| r.label == Some(Label::Attack(AttackLabel::Ex7))).collect();
        assert!(flood.iter().all(|r| r.payload_len == 2000));
    }
}
