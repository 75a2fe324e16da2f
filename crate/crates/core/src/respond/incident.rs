use std::collections::HashSet;
use std::io::Write;
use std::net::Ipv4Addr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{block_source, Action, FirewallBackend, ResponsePolicy};
use crate::detect::AttackLabel;
use crate::telemetry::MacAddr;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncidentRecord {
    pub ts_us: u64,
    pub label: AttackLabel,
    pub src_ip: Ipv4Addr,
    pub src_mac: MacAddr,
    pub actions_taken: Vec<Action>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_installed_ts_us: Option<u64>,
    /// Set when this (source, label) pair was already handled; no actions
    /// run again.
    #[serde(default)]
    pub repeat: bool,
    #[serde(default)]
    pub action_failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct State {
    handled: HashSet<(Ipv4Addr, AttackLabel)>,
    records: Vec<IncidentRecord>,
    log: Option<Box<dyn Write + Send>>,
}

/// Executes the policy for each incident. Idempotent per (source, label):
/// repeats are recorded but never reinstall a rule.
pub struct IncidentResponder {
    policy: ResponsePolicy,
    backend: Arc<dyn FirewallBackend>,
    state: Mutex<State>,
}

impl IncidentResponder {
    pub fn new(policy: ResponsePolicy, backend: Arc<dyn FirewallBackend>) -> Self {
        IncidentResponder {
            policy,
            backend,
            state: Mutex::new(State {
                handled: HashSet::new(),
                records: Vec::new(),
                log: None,
            }),
        }
    }

    /// Appends every record as one JSON line to `sink`.
    pub fn with_log(self, sink: Box<dyn Write + Send>) -> Self {
        self.state.lock().unwrap().log = Some(sink);
        self
    }

    pub fn backend(&self) -> &Arc<dyn FirewallBackend> {
        &self.backend
    }

    pub fn policy(&self) -> &ResponsePolicy {
        &self.policy
    }

    pub fn is_blocked(&self, ip: Ipv4Addr) -> bool {
        self.backend.is_blocked(ip)
    }

    pub fn handle_incident(
        &self,
        label: AttackLabel,
        src_ip: Ipv4Addr,
        src_mac: MacAddr,
        ts_us: u64,
    ) -> IncidentRecord {
        let mut state = self.state.lock().unwrap();
        let mut record = IncidentRecord {
            ts_us,
            label,
            src_ip,
            src_mac,
            actions_taken: Vec::new(),
            block_installed_ts_us: None,
            repeat: !state.handled.insert((src_ip, label)),
            action_failed: false,
            error: None,
        };
        if !record.repeat {
            for &action in self.policy.actions_for(label) {
                match action {
                    Action::LogOnly => {
                        log::warn!("{label} from {src_ip} ({src_mac})");
                        record.actions_taken.push(action);
                    }
                    Action::BlockSource if self.backend.is_blocked(src_ip) => {
                        record.actions_taken.push(action);
                    }
                    Action::BlockSource => match block_source(src_ip, self.backend.as_ref()) {
                        Ok(installed) => {
                            log::warn!("{label} from {src_ip}: source blocked");
                            record.block_installed_ts_us = Some(installed.max(ts_us));
                            record.actions_taken.push(action);
                        }
                        Err(e) => {
                            log::error!("{label} from {src_ip}: block failed: {e}");
                            record.action_failed = true;
                            record.error = Some(e.to_string());
                        }
                    },
                }
            }
        }
        if let Some(sink) = state.log.as_mut() {
            let line = serde_json::to_string(&record).expect("record serializes");
            if let Err(e) = writeln!(sink, "{line}").and_then(|_| sink.flush()) {
                log::error!("incident log write failed: {e}");
            }
        }
        state.records.push(record.clone());
        record
    }

    pub fn records(&self) -> Vec<IncidentRecord> {
        self.state.lock().unwrap().records.clone()
    }
}
