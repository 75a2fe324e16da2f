#![allow(dead_code)]

pub mod oracle;

use std::io::{Read, Write};
use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::thread;
use std::time::Duration;

use plcshield::relay::{start_relay, MbapFramer, MediationEngine, RelayConfig, RelayHandle};
use plcshield::simlab::modbus::{respond, DataMap};
use plcshield::simlab::{build_corpus, CorpusConfig};
use plcshield::workflow::{train, ModelBundle, TrainConfig};

/// A bundle trained on a tenth-scale corpus, shared by every test in a
/// binary.
pub fn small_bundle() -> Arc<ModelBundle> {
    static BUNDLE: OnceLock<Arc<ModelBundle>> = OnceLock::new();
    BUNDLE
        .get_or_init(|| {
            let corpus = build_corpus(&CorpusConfig::desk(11).scaled(0.1)).unwrap();
            let config = TrainConfig {
                k_values: (5..=8).collect(),
                repeats: 2,
                n_trees: 40,
                ..TrainConfig::with_seed(11)
            };
            let (bundle, _) = train(&corpus.benign.rows, &corpus.labeled.rows, corpus.baselines, &config).unwrap();
            Arc::new(bundle)
        })
        .clone()
}

/// `small_bundle` with the anomaly threshold replaced.
pub fn with_threshold(threshold: f64) -> Arc<ModelBundle> {
    let mut b = (*small_bundle()).clone();
    b.lof.threshold = threshold;
    Arc::new(b)
}

/// Controller stand-in that records every byte it receives and sends.
pub struct RecordingUpstream {
    pub addr: SocketAddr,
    pub received: Arc<Mutex<Vec<u8>>>,
    pub sent: Arc<Mutex<Vec<u8>>>,
    stop: Arc<AtomicBool>,
}

impl RecordingUpstream {
    pub fn start() -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        listener.set_nonblocking(true).unwrap();
        let addr = listener.local_addr().unwrap();
        let received = Arc::new(Mutex::new(Vec::new()));
        let sent = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let (r, s, st) = (received.clone(), sent.clone(), stop.clone());
        thread::spawn(move || {
            let map = Arc::new(Mutex::new(DataMap::default()));
            while !st.load(Ordering::SeqCst) {
                let Ok((mut conn, _)) = listener.accept() else {
                    thread::sleep(Duration::from_millis(2));
                    continue;
                };
                let (r, s, map) = (r.clone(), s.clone(), map.clone());
                thread::spawn(move || {
                    conn.set_nonblocking(false).unwrap();
                    let mut framer = MbapFramer::new();
                    let mut buf = [0u8; 8192];
                    loop {
                        let n = match conn.read(&mut buf) {
                            Ok(0) | Err(_) => return,
                            Ok(n) => n,
                        };
                        r.lock().unwrap().extend_from_slice(&buf[..n]);
                        let Ok(frames) = framer.push(&buf[..n]) else { return };
                        for f in frames {
                            if let Some(resp) = respond(&map, &f) {
                                s.lock().unwrap().extend_from_slice(&resp);
                                if conn.write_all(&resp).is_err() {
                                    return;
                                }
                            }
                        }
                    }
                });
            }
        });
        RecordingUpstream { addr, received, sent, stop }
    }

    pub fn received(&self) -> Vec<u8> {
        self.received.lock().unwrap().clone()
    }

    pub fn sent(&self) -> Vec<u8> {
        self.sent.lock().unwrap().clone()
    }
}

impl Drop for RecordingUpstream {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
    }
}

/// Waits until `f` holds or `ms` milliseconds pass.
pub fn eventually(ms: u64, mut f: impl FnMut() -> bool) -> bool {
    for _ in 0..ms {
        if f() {
            return true;
        }
        thread::sleep(Duration::from_millis(1));
    }
    f()
}

/// A random packet sequence with nondecreasing timestamps over `peers`
/// MACs, a few IPs per MAC, a handful of source ports and gaps that
/// sometimes exceed the 60 s horizon.
pub fn fuzz_packets(seed: u64, n: usize, peers: usize) -> Vec<plcshield::telemetry::PacketMeta> {
    use plcshield::telemetry::{MacAddr, PacketMeta, Transport};
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut ts = 0u64;
    (0..n)
        .map(|_| {
            ts += match rng.random_range(0..100) {
                0 => rng.random_range(30_000_000..90_000_000),
                1..=9 => 0,
                _ => rng.random_range(0..400_000),
            };
            let mac = rng.random_range(0..peers.max(1)) as u8;
            let frame: u32 = if rng.random_bool(0.3) { rng.random_range(60..70) } else { rng.random_range(1..1700) };
            PacketMeta {
                timestamp_us: ts,
                src_mac: MacAddr([2, 0, 0, 0, 0, mac]),
                src_ip: std::net::Ipv4Addr::new(10, 0, mac, rng.random_range(1..4)),
                src_port: rng.random_range(40_000..40_006),
                dst_port: 502,
                frame_len_bytes: frame,
                payload_len_bytes: rng.random_range(0..=frame),
                transport: Transport::Tcp,
            }
        })
        .collect()
}

/// Random baselines for the first `peers` MACs of [`fuzz_packets`].
pub fn fuzz_baselines(seed: u64, peers: usize) -> Vec<plcshield::telemetry::BaselineHistogram> {
    use plcshield::telemetry::{BaselineHistogram, MacAddr, SizeBins};
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xb5);
    let keep: Vec<usize> = (0..peers).filter(|_| rng.random_bool(0.7)).collect();
    keep.into_iter()
        .map(|i| {
            let mut p = [0.0; 5];
            for v in p.iter_mut() {
                *v = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.01..1.0) };
            }
            p[0] += 0.01;
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= s);
            BaselineHistogram {
                peer: MacAddr([2, 0, 0, 0, 0, i as u8]),
                bin_edges: SizeBins::default().edges,
                probabilities: p,
            }
        })
        .collect()
}

/// Starts a relay on an ephemeral loopback port in front of `upstream`.
pub fn relay_to(upstream: SocketAddr, engine: Arc<MediationEngine>) -> RelayHandle {
    let config = RelayConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        upstream,
        ..RelayConfig::default()
    };
    start_relay(&config, engine).unwrap()
}

/// Connects to `target` from a chosen loopback source address.
pub fn connect_from(ip: Ipv4Addr, target: SocketAddr) -> std::io::Result<TcpStream> {
    use socket2::{Domain, Protocol, Socket, Type};
    let s = Socket::new(Domain::IPV4, Type::STREAM, Some(Protocol::TCP))?;
    s.bind(&SocketAddr::V4(SocketAddrV4::new(ip, 0)).into())?;
    s.connect_timeout(&target.into(), Duration::from_secs(2))?;
    Ok(s.into())
}
