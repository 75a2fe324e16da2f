use std::io::{self, Write};
use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use socket2::{Domain, Protocol, Socket, Type};

use super::modbus::{self, function_name, round_trip, sample_request, StubController, SUPPORTED_FUNCTIONS};
use super::scenario::flood_frame;
use super::SimlabError;
use crate::relay::{start_relay, MediationEngine, RelayConfig, RelayMode, Verdict};
use crate::respond::{Action, FirewallBackend, IncidentResponder, MemoryBlocklist, ResponsePolicy};
use crate::workflow::ModelBundle;

pub const BENCH_CYCLES: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub function: String,
    /// `without-ids` or `with-ids`.
    pub config: String,
    pub mean_us: f64,
    pub std_us: f64,
    pub median_us: f64,
    pub max_us: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub cycles: usize,
    pub rows: Vec<BenchRow>,
    /// Median(with) minus median(without), per function, in row order.
    pub median_overhead_us: Vec<(String, f64)>,
    /// Same over all samples of all functions.
    pub pooled_median_overhead_us: f64,
    /// False when a connection failed part way; rows are then partial.
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl BenchReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "function,config,mean_us,std_us,median_us")?;
        for r in &self.rows {
            writeln!(out, "{},{},{:.3},{:.3},{:.3}", r.function, r.config, r.mean_us, r.std_us, r.median_us)?;
        }
        Ok(())
    }
}

pub(crate) fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn summarize(function: &str, config: &str, samples: &[f64]) -> BenchRow {
    let n = samples.len().max(1) as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    BenchRow {
        function: function.to_string(),
        config: config.to_string(),
        mean_us: mean,
        std_us: var.sqrt(),
        median_us: median(samples),
        max_us: samples.iter().copied().fold(f64::NAN, f64::max),
    }
}

fn time_cycles(addr: SocketAddr, fc: u8, cycles: usize) -> io::Result<Vec<f64>> {
    let mut s = TcpStream::connect(addr)?;
    s.set_nodelay(true)?;
    s.set_read_timeout(Some(Duration::from_secs(5)))?;
    let mut out = Vec::with_capacity(cycles);
    for i in 0..cycles {
        let req = modbus::adu(i as u16, &sample_request(fc, i as u16));
        let t = Instant::now();
        let resp = round_trip(&mut s, &req)?;
        out.push(t.elapsed().as_secs_f64() * 1e6);
        if resp[7] & 0x7F != fc {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "response function mismatch"));
        }
    }
    Ok(out)
}

/// Times `cycles` request/response round trips per supported function,
/// first straight to a stub controller and then through a relay running
/// the full mediation path. The relay is in monitor mode so every request
/// is answered.
pub fn bench_latency(bundle: Arc<ModelBundle>, cycles: usize) -> Result<BenchReport, SimlabError> {
    let stub = StubController::start("127.0.0.1:0".parse().unwrap())?;
    let engine = Arc::new(MediationEngine::new(bundle, RelayMode::Monitor));
    let config = RelayConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        upstream: stub.local_addr(),
        mode: RelayMode::Monitor,
        ..RelayConfig::default()
    };
    let relay = start_relay(&config, engine).map_err(|e| SimlabError::Trace(e.to_string()))?;
    let mut rows = Vec::new();
    let mut overhead = Vec::new();
    let (mut all_without, mut all_with) = (Vec::new(), Vec::new());
    let mut error = None;
    for fc in SUPPORTED_FUNCTIONS {
        let name = function_name(fc);
        let without = time_cycles(stub.local_addr(), fc, cycles);
        let with = time_cycles(relay.local_addr(), fc, cycles);
        match (without, with) {
            (Ok(a), Ok(b)) => {
                let ra = summarize(name, "without-ids", &a);
                let rb = summarize(name, "with-ids", &b);
                overhead.push((name.to_string(), rb.median_us - ra.median_us));
                rows.push(ra);
                rows.push(rb);
                all_without.extend(a);
                all_with.extend(b);
            }
            (Err(e), _) | (_, Err(e)) => {
                error = Some(format!("{name}: {e}"));
                break;
            }
        }
    }
    relay.shutdown();
    stub.shutdown();
    Ok(BenchReport {
        cycles,
        rows,
        median_overhead_us: overhead,
        pooled_median_overhead_us: median(&all_with) - median(&all_without),
        valid: error.is_none(),
        error,
    })
}

/// Source address the flood attacker binds to.
pub const ATTACKER_IP: Ipv4Addr = Ipv4Addr::new(127, 0, 0, 66);
/// Most attacker sockets opened at once; logical threads beyond this share
/// sockets and send their frames in one write.
pub const FLOOD_SOCKET_CAP: usize = 16;
/// Repetition is marked failed when no block is installed by then.
pub const FLOOD_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FloodSweep {
    /// Packet sizes 200..=2000 step 200 at 500 threads.
    Size,
    /// Thread counts 100..=10,000 at 1200 bytes.
    Threads,
}

impl FloodSweep {
    /// `(packet_size, threads)` for each setting.
    pub fn settings(self) -> Vec<(usize, usize)> {
        match self {
            FloodSweep::Size => (1..=10).map(|i| (200 * i, 500)).collect(),
            FloodSweep::Threads => [100, 250, 500, 1000, 2500, 5000, 10_000].into_iter().map(|t| (1200, t)).collect(),
        }
    }

    pub fn setting_value(self, size: usize, threads: usize) -> usize {
        match self {
            FloodSweep::Size => size,
            FloodSweep::Threads => threads,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloodRow {
    pub setting: usize,
    pub repetition: usize,
    pub allowed_requests: usize,
    pub block_time_ms: f64,
    pub blocked: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloodReport {
    pub sweep: FloodSweep,
    pub repetitions: usize,
    pub rows: Vec<FloodRow>,
}

impl FloodReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "setting,repetition,allowed_requests,block_time_ms")?;
        for r in &self.rows {
            let t = if r.blocked { format!("{:.3}", r.block_time_ms) } else { "failed".into() };
            writeln!(out, "{},{},{},{}", r.setting, r.repetition, r.allowed_requests, t)?;
        }
        Ok(())
    }

    pub fn settings(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.rows.iter().map(|r| r.setting).collect();
        s.dedup();
        s
    }

    /// Median block time per setting over successful repetitions.
    pub fn median_block_ms(&self, setting: usize) -> f64 {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.setting == setting && r.blocked)
            .map(|r| r.block_time_ms)
            .collect();
        median(&v)
    }

    pub fn median_allowed(&self, setting: usize) -> f64 {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.setting == setting)
            .map(|r| r.allowed_requests as f64)
            .collect();
        median(&v)
    }

    pub fn failed(&self) -> usize {
        self.rows.iter().filter(|r| !r.blocked).count()
    }
}

/// Launches one flood against a fresh relay and measures how many attacker
/// messages reach the controller and how long blocking takes from the
/// arrival of the first attacker message at the relay.
fn flood_once(
    bundle: &Arc<ModelBundle>,
    upstream: SocketAddr,
    size: usize,
    threads: usize,
    seed: u64,
) -> Result<(usize, Option<f64>), SimlabError> {
    let backend: Arc<dyn FirewallBackend> = Arc::new(MemoryBlocklist::new());
    let responder = Arc::new(IncidentResponder::new(ResponsePolicy::default(), backend.clone()));
    let engine = Arc::new(
        MediationEngine::new(bundle.clone(), RelayMode::Enforce)
            .with_responder(responder.clone())
            .with_history(),
    );
    let config = RelayConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        upstream,
        ..RelayConfig::default()
    };
    let relay = start_relay(&config, engine.clone()).map_err(|e| SimlabError::Trace(e.to_string()))?;
    let target = relay.local_addr();

    let sockets = threads.clamp(1, FLOOD_SOCKET_CAP);
    let stop = Arc::new(AtomicBool::new(false));
    let ready = Arc::new(Barrier::new(sockets + 1));
    let go = Arc::new(Barrier::new(sockets + 1));
    let mut workers = Vec::with_capacity(sockets);
    for w in 0..sockets {
        let per_socket = threads / sockets + usize::from(w < threads % sockets);
        let (stop, ready, go) = (stop.clone(), ready.clone(), go.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (w as u64).wrapping_mul(0x9E37_79B9));
        workers.push(thread::spawn(move || {
            // Like hping3, each sender repeats one prepared payload.
            let burst: Vec<u8> = (0..per_socket)
                .flat_map(|i| flood_frame(i as u16, size, &mut rng))
                .collect();
            let stream = connect_from(ATTACKER_IP, target);
            ready.wait();
            go.wait();
            let Ok(mut s) = stream else { return };
            let _ = s.set_nodelay(true);
            while !stop.load(Ordering::Relaxed) {
                if s.write_all(&burst).is_err() {
                    break;
                }
            }
        }));
    }
    // The flood starts once every attacker session is up on the relay.
    ready.wait();
    let settle = Instant::now() + Duration::from_secs(2);
    while relay.active_sessions() < sockets && Instant::now() < settle {
        thread::sleep(Duration::from_millis(1));
    }
    thread::sleep(Duration::from_millis(20));
    go.wait();
    // Workers exit once the relay cuts their sessions; the watchdog only
    // matters when no block ever comes.
    let watchdog = {
        let stop = stop.clone();
        thread::spawn(move || {
            let deadline = Instant::now() + FLOOD_TIMEOUT;
            while !stop.load(Ordering::SeqCst) && Instant::now() < deadline {
                thread::sleep(Duration::from_millis(20));
            }
            stop.store(true, Ordering::SeqCst);
        })
    };
    for w in workers {
        let _ = w.join();
    }
    stop.store(true, Ordering::SeqCst);
    let _ = watchdog.join();
    relay.shutdown();

    let history = engine.history();
    let attacker: Vec<_> = history.iter().filter(|(ip, _)| *ip == ATTACKER_IP).map(|(_, r)| r).collect();
    let t0 = attacker
        .iter()
        .map(|r| r.ts_us)
        .min()
        .unwrap_or(u64::MAX);
    let block = responder
        .records()
        .into_iter()
        .filter(|r| r.src_ip == ATTACKER_IP && r.actions_taken.contains(&Action::BlockSource))
        .filter_map(|r| r.block_installed_ts_us)
        .min();
    let allowed = attacker.iter().filter(|r| r.verdict == Verdict::Forward).count();
    let block_ms = block.map(|b| b.saturating_sub(t0) as f64 / 1e3);
    Ok((allowed, block_ms))
}

fn connect_from(ip: Ipv4Addr, target: SocketAddr) -> io::Result<TcpStream> {
    let socket = Socket::new(Domain::IPV4, Type::STREAM, Some(Protocol::TCP))?;
    socket.bind(&SocketAddr::V4(SocketAddrV4::new(ip, 0)).into())?;
    socket.connect_timeout(&target.into(), Duration::from_secs(2))?;
    Ok(socket.into())
}

/// Runs every setting of `sweep` `repetitions` times.
pub fn flood_experiment(
    bundle: Arc<ModelBundle>,
    sweep: FloodSweep,
    repetitions: usize,
    seed: u64,
) -> Result<FloodReport, SimlabError> {
    let stub = StubController::start("127.0.0.1:0".parse().unwrap())?;
    let mut rows = Vec::new();
    let settings = sweep.settings();
    // One discarded run so the first setting does not pay for cold caches.
    if let Some(&(size, threads)) = settings.first() {
        flood_once(&bundle, stub.local_addr(), size, threads, seed)?;
    }
    for (size, threads) in settings {
        for rep in 0..repetitions {
            let s = seed.wrapping_add((size * 100_003 + threads * 7 + rep) as u64);
            let (allowed, block) = flood_once(&bundle, stub.local_addr(), size, threads, s)?;
            rows.push(FloodRow {
                setting: sweep.setting_value(size, threads),
                repetition: rep,
                allowed_requests: allowed,
                block_time_ms: block.unwrap_or(f64::NAN),
                blocked: block.is_some(),
            });
        }
    }
    stub.shutdown();
    Ok(FloodReport {
        sweep,
        repetitions,
        rows,
    })
}

