use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, SocketAddrV4, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::engine::{MediationEngine, RelayMode};
use super::framing::MbapFramer;
use super::RelayError;
use crate::net::{serve, ServerHandle};
use crate::respond::{CommandBackend, FirewallBackend, IncidentResponder, MemoryBlocklist, ResponsePolicy};
use crate::workflow::ModelBundle;

const POLL: Duration = Duration::from_millis(100);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelayConfig {
    pub listen: SocketAddr,
    pub upstream: SocketAddr,
    pub models_path: PathBuf,
    /// Response policy JSON; the built-in policy when absent.
    pub policy_path: Option<PathBuf>,
    /// Shell template for source blocks; in-memory blocklist when absent.
    pub block_cmd: Option<String>,
    pub decision_log: Option<PathBuf>,
    pub incident_log: Option<PathBuf>,
    pub max_sessions: usize,
    pub idle_timeout_s: f64,
    pub mode: RelayMode,
}

impl Default for RelayConfig {
    fn default() -> Self {
        RelayConfig {
            listen: "0.0.0.0:502".parse().unwrap(),
            upstream: "127.0.0.1:4321".parse().unwrap(),
            models_path: PathBuf::from("models.json"),
            policy_path: None,
            block_cmd: None,
            decision_log: None,
            incident_log: None,
            max_sessions: 1024,
            idle_timeout_s: 300.0,
            mode: RelayMode::Enforce,
        }
    }
}

impl RelayConfig {
    pub fn from_json(text: &str) -> Result<Self, RelayError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn validate(&self) -> Result<(), RelayError> {
        let local = |a: &SocketAddr| a.ip().is_loopback() || a.ip().is_unspecified();
        if self.listen.port() == self.upstream.port() && local(&self.listen) && local(&self.upstream) {
            return Err(RelayError::Config(format!(
                "listen and upstream share port {} on this host",
                self.listen.port()
            )));
        }
        if self.max_sessions == 0 {
            return Err(RelayError::Config("max_sessions must be positive".into()));
        }
        if !(self.idle_timeout_s > 0.0) {
            return Err(RelayError::Config("idle_timeout_s must be positive".into()));
        }
        Ok(())
    }

    /// Loads models, policy and logs and assembles the engine.
    pub fn build_engine(&self) -> Result<MediationEngine, RelayError> {
        let bundle = ModelBundle::load(&self.models_path)?;
        let policy = match &self.policy_path {
            Some(p) => ResponsePolicy::from_json(&std::fs::read_to_string(p)?)?,
            None => ResponsePolicy::default(),
        };
        let backend: Arc<dyn FirewallBackend> = match &self.block_cmd {
            Some(t) => Arc::new(CommandBackend::new(t.clone())),
            None => Arc::new(MemoryBlocklist::new()),
        };
        let mut responder = IncidentResponder::new(policy, backend);
        if let Some(p) = &self.incident_log {
            responder = responder.with_log(Box::new(open_log(p)?));
        }
        let mut engine = MediationEngine::new(Arc::new(bundle), self.mode).with_responder(Arc::new(responder));
        if let Some(p) = &self.decision_log {
            engine = engine.with_log(Box::new(open_log(p)?));
        }
        Ok(engine)
    }
}

fn open_log(path: &Path) -> io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::options().create(true).append(true).open(path)?))
}

/// A running relay.
pub struct RelayHandle {
    server: ServerHandle,
    engine: Arc<MediationEngine>,
    active: Arc<AtomicUsize>,
}

impl RelayHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.server.local_addr()
    }

    pub fn engine(&self) -> &Arc<MediationEngine> {
        &self.engine
    }

    pub fn active_sessions(&self) -> usize {
        self.active.load(Ordering::SeqCst)
    }

    pub fn shutdown(self) {
        let stop = self.server.stop_flag();
        self.server.shutdown();
        stop.store(true, Ordering::SeqCst);
        let deadline = Instant::now() + Duration::from_secs(2);
        while self.active.load(Ordering::SeqCst) > 0 && Instant::now() < deadline {
            thread::sleep(Duration::from_millis(5));
        }
        self.engine.flush_log();
    }
}

/// Starts the relay on `config.listen` with a prepared engine.
pub fn start_relay(config: &RelayConfig, engine: Arc<MediationEngine>) -> Result<RelayHandle, RelayError> {
    config.validate()?;
    let active = Arc::new(AtomicUsize::new(0));
    let cfg = Arc::new(config.clone());
    let eng = engine.clone();
    let count = active.clone();
    let server = serve(config.listen, "relay", move |client, peer, stop| {
        let SocketAddr::V4(peer) = peer else {
            log::warn!("relay: refusing non-IPv4 client {peer}");
            return;
        };
        if eng.mode() == RelayMode::Enforce && eng.is_blocked(*peer.ip()) {
            log::info!("relay: refused blocked source {peer}");
            let _ = client.shutdown(Shutdown::Both);
            return;
        }
        if count.fetch_add(1, Ordering::SeqCst) >= cfg.max_sessions {
            count.fetch_sub(1, Ordering::SeqCst);
            log::warn!("relay: session limit reached, refusing {peer}");
            let _ = client.shutdown(Shutdown::Both);
            return;
        }
        if let Err(e) = session(client, peer, &cfg, &eng, &stop) {
            log::debug!("relay: session {peer} ended: {e}");
        }
        count.fetch_sub(1, Ordering::SeqCst);
    })?;
    Ok(RelayHandle { server, engine, active })
}

/// Builds the engine from `config` and serves until `stop` is set.
pub fn run_relay(config: &RelayConfig, stop: Arc<AtomicBool>) -> Result<(), RelayError> {
    let engine = Arc::new(config.build_engine()?);
    let handle = start_relay(config, engine)?;
    log::info!("relay listening on {} -> {}", handle.local_addr(), config.upstream);
    while !stop.load(Ordering::SeqCst) {
        thread::sleep(POLL);
    }
    handle.shutdown();
    Ok(())
}

fn session(
    mut client: TcpStream,
    peer: SocketAddrV4,
    config: &RelayConfig,
    engine: &MediationEngine,
    stop: &AtomicBool,
) -> io::Result<()> {
    let mut upstream = match TcpStream::connect_timeout(&config.upstream, Duration::from_secs(2)) {
        Ok(s) => s,
        Err(e) => {
            log::error!("relay: upstream {} unreachable for {peer}: {e}", config.upstream);
            let _ = client.shutdown(Shutdown::Both);
            return Err(e);
        }
    };
    client.set_nodelay(true)?;
    upstream.set_nodelay(true)?;
    client.set_read_timeout(Some(POLL))?;

    let mut back_from = upstream.try_clone()?;
    let mut back_to = client.try_clone()?;
    let back = thread::Builder::new().name("relay-upstream".into()).spawn(move || {
        let _ = io::copy(&mut back_from, &mut back_to);
        let _ = back_to.shutdown(Shutdown::Write);
    })?;

    let idle = Duration::from_secs_f64(config.idle_timeout_s);
    let mut last_activity = Instant::now();
    let mut framer = MbapFramer::new();
    let mut buf = vec![0u8; 64 * 1024];
    let result = loop {
        if stop.load(Ordering::SeqCst) {
            break Ok(());
        }
        let n = match client.read(&mut buf) {
            Ok(0) => break Ok(()),
            Ok(n) => n,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                if last_activity.elapsed() >= idle {
                    log::info!("relay: {peer} idle, closing");
                    break Ok(());
                }
                continue;
            }
            Err(e) => break Err(e),
        };
        last_activity = Instant::now();
        let messages = match framer.push(&buf[..n]) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("relay: {peer} sent a malformed stream ({e}), closing");
                break Ok(());
            }
        };
        let mut closed = false;
        for msg in messages {
            let d = engine.mediate(peer, &msg);
            if d.forwarded() {
                if let Err(e) = upstream.write_all(&msg) {
                    closed = true;
                    log::debug!("relay: upstream write failed: {e}");
                    break;
                }
            } else if engine.mode() == RelayMode::Enforce && engine.is_blocked(*peer.ip()) {
                closed = true;
                break;
            }
        }
        if closed {
            break Ok(());
        }
    };
    let _ = upstream.shutdown(Shutdown::Both);
    let _ = client.shutdown(Shutdown::Both);
    let _ = back.join();
    result
}
