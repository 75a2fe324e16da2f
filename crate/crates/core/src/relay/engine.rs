use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::net::{Ipv4Addr, SocketAddrV4};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::framing::SYNTHETIC_HEADER_BYTES;
use crate::detect::AttackLabel;
use crate::respond::{unix_time_us, Action, IncidentResponder};
use crate::telemetry::{MacAddr, PacketMeta, SizeBins, TelemetrySensor, Transport};
use crate::workflow::ModelBundle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Forward,
    Drop,
}

/// Why a message was dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DropLabel {
    /// Scored above the threshold and categorized.
    Attack(AttackLabel),
    /// Telemetry or scoring failed; dropped without a verdict.
    Malformed,
    /// Source was already blocked.
    Blocked,
}

impl fmt::Display for DropLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DropLabel::Attack(l) => write!(f, "{l}"),
            DropLabel::Malformed => f.write_str("malformed"),
            DropLabel::Blocked => f.write_str("blocked"),
        }
    }
}

impl Serialize for DropLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MediationDecision {
    pub verdict: Verdict,
    /// LOF score; NaN when the message was never scored.
    pub lof_score: f64,
    /// Present exactly when the verdict is `Drop`.
    pub label: Option<DropLabel>,
    pub latency_us: u64,
}

impl MediationDecision {
    pub fn forwarded(&self) -> bool {
        self.verdict == Verdict::Forward
    }
}

/// One line of the decision log.
#[derive(Clone, Debug, Serialize)]
pub struct DecisionRecord {
    /// Arrival time of the message, Unix microseconds.
    pub ts_us: u64,
    pub peer: String,
    pub verdict: Verdict,
    pub score: Option<f64>,
    pub label: Option<DropLabel>,
    pub latency_us: u64,
}

/// What the relay does with anomalous messages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelayMode {
    /// Drop anomalous messages and raise incidents.
    #[default]
    Enforce,
    /// Score and log every message but forward all of them. No incidents.
    Monitor,
}

/// Shared detection state for all sessions of one relay.
pub struct MediationEngine {
    bundle: Arc<ModelBundle>,
    sensor: Mutex<TelemetrySensor>,
    clock: Instant,
    mode: RelayMode,
    responder: Option<Arc<IncidentResponder>>,
    reported: Mutex<HashSet<(Ipv4Addr, AttackLabel)>>,
    /// Sources whose block is queued but maybe not installed yet.
    quarantine: RwLock<HashSet<Ipv4Addr>>,
    log: Mutex<Option<Box<dyn Write + Send>>>,
    history: Mutex<Option<Vec<(Ipv4Addr, DecisionRecord)>>>,
}

impl MediationEngine {
    pub fn new(bundle: Arc<ModelBundle>, mode: RelayMode) -> Self {
        let sensor = TelemetrySensor::with_baselines(SizeBins::default(), bundle.pipeline.baselines.iter().cloned());
        MediationEngine {
            bundle,
            sensor: Mutex::new(sensor),
            clock: Instant::now(),
            mode,
            responder: None,
            reported: Mutex::new(HashSet::new()),
            quarantine: RwLock::new(HashSet::new()),
            log: Mutex::new(None),
            history: Mutex::new(None),
        }
    }

    /// Routes incidents to `responder`. An incident is handled after the
    /// verdict for its message is final and timed, on the session that
    /// raised it, so mediation latency never includes rule installation and
    /// other sessions never wait for it.
    pub fn with_responder(mut self, responder: Arc<IncidentResponder>) -> Self {
        self.responder = Some(responder);
        self
    }

    /// Writes one JSON line per decision to `sink`.
    pub fn with_log(self, sink: Box<dyn Write + Send>) -> Self {
        *self.log.lock().unwrap() = Some(sink);
        self
    }

    /// Keeps every decision in memory, retrievable with [`Self::history`].
    pub fn with_history(self) -> Self {
        *self.history.lock().unwrap() = Some(Vec::new());
        self
    }

    pub fn mode(&self) -> RelayMode {
        self.mode
    }

    pub fn bundle(&self) -> &ModelBundle {
        &self.bundle
    }

    pub fn responder(&self) -> Option<&Arc<IncidentResponder>> {
        self.responder.as_ref()
    }

    /// True once a block for `ip` has been queued or installed.
    pub fn is_blocked(&self, ip: Ipv4Addr) -> bool {
        self.quarantine.read().unwrap().contains(&ip) || self.responder.as_ref().is_some_and(|r| r.is_blocked(ip))
    }

    /// Recorded decisions with their source address, if history is on.
    pub fn history(&self) -> Vec<(Ipv4Addr, DecisionRecord)> {
        self.history.lock().unwrap().clone().unwrap_or_default()
    }

    /// Mediates one application message received from `peer`.
    pub fn mediate(&self, peer: SocketAddrV4, message: &[u8]) -> MediationDecision {
        let started = Instant::now();
        let arrived_us = unix_time_us();
        let ip = *peer.ip();
        let decision = if self.mode == RelayMode::Enforce && self.is_blocked(ip) {
            self.decide(Verdict::Drop, f64::NAN, Some(DropLabel::Blocked), started)
        } else {
            let frame = u32::try_from(message.len())
                .ok()
                .and_then(|n| n.checked_add(SYNTHETIC_HEADER_BYTES));
            match frame {
                Some(frame_len) => self.score(peer, frame_len, message.len() as u32, started),
                None => self.decide(Verdict::Drop, f64::NAN, Some(DropLabel::Malformed), started),
            }
        };
        self.record(ip, peer, arrived_us, &decision);
        decision
    }

    fn score(&self, peer: SocketAddrV4, frame_len: u32, payload_len: u32, started: Instant) -> MediationDecision {
        let ip = *peer.ip();
        let mac = MacAddr::from_ipv4(ip);
        let observed = {
            let mut sensor = self.sensor.lock().unwrap();
            let packet = PacketMeta {
                timestamp_us: self.clock.elapsed().as_micros() as u64,
                src_mac: mac,
                src_ip: ip,
                src_port: peer.port(),
                dst_port: 0,
                frame_len_bytes: frame_len,
                payload_len_bytes: payload_len,
                transport: Transport::Tcp,
            };
            sensor.ingest(&packet)
        };
        self.judge(observed.map(|o| o.features).ok(), ip, mac, started)
    }

    /// Scores an already-built packet; used when replaying captures.
    pub fn mediate_packet(&self, packet: &PacketMeta) -> MediationDecision {
        let started = Instant::now();
        let arrived_us = unix_time_us();
        let observed = self.sensor.lock().unwrap().ingest(packet);
        let d = self.judge(observed.map(|o| o.features).ok(), packet.src_ip, packet.src_mac, started);
        self.record(packet.src_ip, SocketAddrV4::new(packet.src_ip, packet.src_port), arrived_us, &d);
        d
    }

    fn judge(
        &self,
        features: Option<crate::telemetry::FeatureVector>,
        ip: Ipv4Addr,
        mac: MacAddr,
        started: Instant,
    ) -> MediationDecision {
        let Some(features) = features else {
            return self.decide(Verdict::Drop, f64::NAN, Some(DropLabel::Malformed), started);
        };
        let detection = match self.bundle.detect(&features) {
            Ok(d) => d,
            Err(_) => return self.decide(Verdict::Drop, f64::NAN, Some(DropLabel::Malformed), started),
        };
        if !detection.anomalous || self.mode == RelayMode::Monitor {
            return self.decide(Verdict::Forward, detection.score, None, started);
        }
        let label = match self.bundle.categorize(&features) {
            Ok(c) => c.label,
            Err(_) => return self.decide(Verdict::Drop, detection.score, Some(DropLabel::Malformed), started),
        };
        let decision = self.decide(Verdict::Drop, detection.score, Some(DropLabel::Attack(label)), started);
        if let Some(r) = &self.responder {
            if self.reported.lock().unwrap().insert((ip, label)) {
                if r.policy().actions_for(label).contains(&Action::BlockSource) {
                    self.quarantine.write().unwrap().insert(ip);
                }
                r.handle_incident(label, ip, mac, unix_time_us());
            }
        }
        decision
    }

    fn decide(&self, verdict: Verdict, score: f64, label: Option<DropLabel>, started: Instant) -> MediationDecision {
        MediationDecision {
            verdict,
            lof_score: score,
            label,
            latency_us: started.elapsed().as_micros() as u64,
        }
    }

    fn record(&self, ip: Ipv4Addr, peer: SocketAddrV4, arrived_us: u64, d: &MediationDecision) {
        let mut log = self.log.lock().unwrap();
        let mut history = self.history.lock().unwrap();
        if log.is_none() && history.is_none() {
            return;
        }
        let rec = DecisionRecord {
            ts_us: arrived_us,
            peer: peer.to_string(),
            verdict: d.verdict,
            score: d.lof_score.is_finite().then_some(d.lof_score),
            label: d.label,
            latency_us: d.latency_us,
        };
        if let Some(sink) = log.as_mut() {
            let line = serde_json::to_string(&rec).expect("decision serializes");
            if let Err(e) = writeln!(sink, "{line}") {
                log::error!("decision log write failed: {e}");
            }
        }
        if let Some(h) = history.as_mut() {
            h.push((ip, rec));
        }
    }

    pub fn flush_log(&self) {
        if let Some(sink) = self.log.lock().unwrap().as_mut() {
            let _ = sink.flush();
        }
    }
}

impl Drop for MediationEngine {
    fn drop(&mut self) {
        self.flush_log();
    }
}
