mod manifest;
mod report;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use manifest::Run;
use plcshield::detect::Label;
use plcshield::relay::{run_relay, RelayConfig, RelayMode};
use plcshield::simlab::{
    bench_latency, build_corpus, extract_features, fit_trace_baselines, flood_experiment, gen_traffic,
    make_dataset, CorpusConfig, FloodSweep, ScenarioSpec, TrafficTrace, BENCH_CYCLES,
};
use plcshield::telemetry::{read_feature_csv, write_feature_csv, BaselineHistogram, FeatureRow};
use plcshield::workflow::{evaluate_dataset, train, ModelBundle, TrainConfig};

#[derive(Parser)]
#[command(name = "plcshield", version, about = "Modbus/TCP intrusion-detection relay and scenario lab")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Seed for every stochastic stage.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// Model bundle to read or write; `<out>/models.json` by default.
    #[arg(long, global = true)]
    models: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// JSON file overriding the command's configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled traffic trace, or with --corpus the three datasets.
    Simulate {
        /// `normal` or an attack label such as EX-7.
        #[arg(long, default_value = "normal")]
        scenario: String,
        #[arg(long)]
        corpus: bool,
        /// Volume multiplier for --corpus.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    /// Fit per-peer packet-size baselines from a benign trace.
    FitBaseline {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Turn traces into a feature CSV.
    Extract {
        #[arg(long, required = true)]
        trace: Vec<PathBuf>,
        #[arg(long)]
        baselines: PathBuf,
        /// Rows earlier than this are dropped (sensor state still updates).
        #[arg(long, default_value_t = 0.0)]
        warmup_s: f64,
    },
    /// Fit the preprocessing pipeline, detector and categorizer.
    Train {
        #[arg(long)]
        benign: PathBuf,
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long)]
        baselines: PathBuf,
    },
    /// Score a labeled feature CSV with a model bundle.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Run the inline relay.
    Serve {
        #[arg(long)]
        listen: Option<SocketAddr>,
        #[arg(long)]
        upstream: Option<SocketAddr>,
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Decision log (JSON lines).
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        incident_log: Option<PathBuf>,
        /// Shell template for blocking a source; `{ip}` is substituted.
        #[arg(long)]
        block_cmd: Option<String>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Stop after this many seconds instead of waiting for a signal.
        #[arg(long)]
        duration_s: Option<f64>,
    },
    /// Time request/response cycles with and without the relay.
    Bench {
        #[arg(long, default_value_t = BENCH_CYCLES)]
        cycles: usize,
    },
    /// Flood a relay and measure blocking.
    Flood {
        #[arg(long, value_enum, default_value = "size")]
        sweep: Sweep,
        #[arg(long, default_value_t = 10)]
        repetitions: usize,
    },
    /// Render run artifacts as plain-text tables.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Enforce,
    Monitor,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sweep {
    Size,
    Threads,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Applies the keys of the `--config` JSON object over `base`.
fn overlay<T: Serialize + DeserializeOwned>(base: T, config: Option<&Path>) -> Result<T> {
    let Some(path) = config else { return Ok(base) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let patch: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut value = serde_json::to_value(base)?;
    match (value.as_object_mut(), patch) {
        (Some(obj), serde_json::Value::Object(p)) => obj.extend(p),
        _ => bail!("{} must hold a JSON object", path.display()),
    }
    serde_json::from_value(value).with_context(|| format!("applying {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn read_trace(path: &Path) -> Result<TrafficTrace> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    TrafficTrace::read_jsonl(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn read_rows(path: &Path) -> Result<Vec<FeatureRow>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_feature_csv(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn read_baselines(path: &Path) -> Result<Vec<BaselineHistogram>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_rows(path: &Path, rows: &[FeatureRow]) -> Result<()> {
    let labeled = rows.iter().any(|r| r.label.is_some());
    let mut w = create(path)?;
    write_feature_csv(&mut w, rows, labeled)?;
    w.flush()?;
    Ok(())
}

fn load_models(path: &Path) -> Result<ModelBundle> {
    ModelBundle::load(path).with_context(|| format!("loading models from {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let c = cli.common;
    std::fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    let cfg = c.config.as_deref();
    let models = c.models.clone().unwrap_or_else(|| c.out.join("models.json"));
    let name = match &cli.command {
        Command::Simulate { .. } => "simulate",
        Command::FitBaseline { .. } => "fit-baseline",
        Command::Extract { .. } => "extract",
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
        Command::Serve { .. } => "serve",
        Command::Bench { .. } => "bench",
        Command::Flood { .. } => "flood",
        Command::Report { .. } => "report",
    };
    let mut run = Run::new(name, c.seed);
    if let Some(p) = cfg {
        run.input(p);
    }
    match cli.command {
        Command::Simulate { scenario, corpus, scale } => {
            if corpus {
                let config = overlay(CorpusConfig::desk(c.seed).scaled(scale), cfg)?;
                run.config(&config)?;
                let corpus = build_corpus(&config)?;
                let files = [
                    ("dataset1.csv", &corpus.benign),
                    ("dataset2.csv", &corpus.labeled),
                    ("dataset3.csv", &corpus.external),
                ];
                for (file, data) in files {
                    let p = c.out.join(file);
                    write_rows(&p, &data.rows)?;
                    run.output(&p);
                    print!("{}", data.summary_table(file));
                }
                let p = c.out.join("baselines.json");
                write_json(&p, &corpus.baselines)?;
                run.output(&p);
                let p = c.out.join("benign_trace.jsonl");
                let mut w = create(&p)?;
                corpus.benign_trace.write_jsonl(&mut w)?;
                w.flush()?;
                run.output(&p);
            } else {
                let label: Label = scenario.parse().map_err(|e| anyhow::anyhow!("{e}"))?;
                let base = match label.attack() {
                    Some(a) => ScenarioSpec::attack(a, c.seed),
                    None => ScenarioSpec::benign(c.seed),
                };
                let spec = overlay(base, cfg)?;
                run.config(&spec)?;
                let trace = gen_traffic(&spec)?;
                let p = c.out.join(format!("{}.jsonl", label.as_str().to_lowercase()));
                let mut w = create(&p)?;
                trace.write_jsonl(&mut w)?;
                w.flush()?;
                run.output(&p);
                println!("{} records", trace.records.len());
            }
        }
        Command::FitBaseline { trace } => {
            run.input(&trace);
            let t = read_trace(&trace)?;
            let baselines = fit_trace_baselines(&t);
            if baselines.is_empty() {
                bail!("{}: no peer has enough packets for a baseline", trace.display());
            }
            let p = c.out.join("baselines.json");
            write_json(&p, &baselines)?;
            run.output(&p);
            println!("{} baselines", baselines.len());
        }
        Command::Extract { trace, baselines, warmup_s } => {
            run.config(&serde_json::json!({ "warmup_s": warmup_s }))?;
            run.input(&baselines);
            let base = read_baselines(&baselines)?;
            let warmup = (warmup_s.max(0.0) * 1e6) as u64;
            let rows = if trace.len() == 1 {
                run.input(&trace[0]);
                extract_features(&read_trace(&trace[0])?, &base, warmup)?
            } else {
                let mut traces = Vec::new();
                for t in &trace {
                    run.input(t);
                    traces.push(read_trace(t)?);
                }
                make_dataset(&traces, &base, warmup)?.rows
            };
            let p = c.out.join("features.csv");
            write_rows(&p, &rows)?;
            run.output(&p);
            println!("{} rows", rows.len());
        }
        Command::Train { benign, labeled, baselines } => {
            let config = overlay(TrainConfig::with_seed(c.seed), cfg)?;
            run.config(&config)?;
            for p in [&benign, &labeled, &baselines] {
                run.input(p);
            }
            let (bundle, report) = train(
                &read_rows(&benign)?,
                &read_rows(&labeled)?,
                read_baselines(&baselines)?,
                &config,
            )?;
            bundle.save(&models)?;
            run.output(&models);
            let p = c.out.join("training_report.json");
            write_json(&p, &report)?;
            run.output(&p);
            print!("{}", report::render(&p)?);
        }
        Command::Eval { dataset } => {
            run.input(&models);
            run.input(&dataset);
            let bundle = load_models(&models)?;
            let e = evaluate_dataset(&bundle, &read_rows(&dataset)?)?;
            let p = c.out.join("eval.json");
            write_json(&p, &e.report)?;
            run.output(&p);
            for (file, cm) in [("stage2_confusion.csv", &e.stage2_confusion), ("confusion.csv", &e.end_to_end_confusion)] {
                let p = c.out.join(file);
                std::fs::write(&p, cm.to_csv())?;
                run.output(&p);
            }
            print!("{}", report::render(&c.out.join("eval.json"))?);
        }
        Command::Serve { listen, upstream, policy, log, incident_log, block_cmd, mode, duration_s } => {
            let mut config = overlay(
                RelayConfig {
                    models_path: models.clone(),
                    ..RelayConfig::default()
                },
                cfg,
            )?;
            if let Some(v) = listen {
                config.listen = v;
            }
            if let Some(v) = upstream {
                config.upstream = v;
            }
            if policy.is_some() {
                config.policy_path = policy;
            }
            if log.is_some() {
                config.decision_log = log;
            }
            if incident_log.is_some() {
                config.incident_log = incident_log;
            }
            if block_cmd.is_some() {
                config.block_cmd = block_cmd;
            }
            if let Some(m) = mode {
                config.mode = match m {
                    Mode::Enforce => RelayMode::Enforce,
                    Mode::Monitor => RelayMode::Monitor,
                };
            }
            config.validate()?;
            run.config(&config)?;
            run.input(&config.models_path);
            let stop = Arc::new(AtomicBool::new(false));
            if let Some(d) = duration_s {
                let s = stop.clone();
                let until = Instant::now() + Duration::from_secs_f64(d.max(0.0));
                thread::spawn(move || {
                    while Instant::now() < until {
                        thread::sleep(Duration::from_millis(50));
                    }
                    s.store(true, Ordering::SeqCst);
                });
            }
            run_relay(&config, stop)?;
            for p in [&config.decision_log, &config.incident_log].into_iter().flatten() {
                if p.exists() {
                    run.output(p);
                }
            }
        }
        Command::Bench { cycles } => {
            run.config(&serde_json::json!({ "cycles": cycles }))?;
            run.input(&models);
            let report = bench_latency(Arc::new(load_models(&models)?), cycles)?;
            let p = c.out.join("bench.csv");
            report.write_csv(create(&p)?)?;
            run.output(&p);
            let j = c.out.join("bench.json");
            write_json(&j, &report)?;
            run.output(&j);
            print!("{}", report::render(&p)?);
            println!("pooled median overhead {:.1} us", report.pooled_median_overhead_us);
            if !report.valid {
                bail!("benchmark incomplete: {}", report.error.unwrap_or_default());
            }
        }
        Command::Flood { sweep, repetitions } => {
            let sweep = match sweep {
                Sweep::Size => FloodSweep::Size,
                Sweep::Threads => FloodSweep::Threads,
            };
            if repetitions == 0 {
                bail!("--repetitions must be positive");
            }
            run.config(&serde_json::json!({ "sweep": sweep, "repetitions": repetitions }))?;
            run.input(&models);
            let report = flood_experiment(Arc::new(load_models(&models)?), sweep, repetitions, c.seed)?;
            let name = match sweep {
                FloodSweep::Size => "flood_size.csv",
                FloodSweep::Threads => "flood_threads.csv",
            };
            let p = c.out.join(name);
            let mut w = create(&p)?;
            report.write_csv(&mut w)?;
            w.flush()?;
            drop(w);
            run.output(&p);
            print!("{}", report::render(&p)?);
        }
        Command::Report { inputs } => {
            let mut text = String::new();
            for p in &inputs {
                run.input(p);
                text.push_str(&format!("== {}\n", p.display()));
                text.push_str(&report::render(p)?);
                text.push('\n');
            }
            let p = c.out.join("report.txt");
            std::fs::write(&p, &text)?;
            run.output(&p);
            print!("{text}");
        }
    }
    run.finish(&c.out)?;
    Ok(())
}
