//! Plain-text tables from run artifacts.

use std::fmt::Write as _;
use std::io::BufReader;
use std::path::Path;

use anyhow::{bail, Context, Result};
use plcshield::simlab::LabeledDataset;
use plcshield::telemetry::{read_feature_csv, FEATURE_CSV_HEADER};
use plcshield::workflow::{EvalReport, TrainingReport};

pub fn render(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first = text.lines().next().unwrap_or("").trim();
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    if first.starts_with("timestamp_us,") && FEATURE_CSV_HEADER.starts_with(first.trim_end_matches(",label")) {
        let rows = read_feature_csv(BufReader::new(text.as_bytes()))?;
        return Ok(LabeledDataset::from_rows(rows).summary_table(&name));
    }
    if first == "function,config,mean_us,std_us,median_us" {
        return bench_table(&text);
    }
    if first == "setting,repetition,allowed_requests,block_time_ms" {
        return flood_table(&text);
    }
    if first.starts_with('{') || first.is_empty() {
        let value: serde_json::Value = serde_json::from_str(&text)?;
        if value.get("ablation").is_some() {
            return Ok(training_table(&serde_json::from_value(value)?));
        }
        if value.get("stage1").is_some() {
            return Ok(eval_table(&serde_json::from_value(value)?));
        }
    }
    bail!("{}: not a dataset, bench, flood, training or evaluation artifact", path.display())
}

fn training_table(r: &TrainingReport) -> String {
    let mut s = format!("{:<20}{:>10}{:>10}{:>10}{:>10}\n", "configuration", "features", "train", "test", "macro");
    for row in &r.ablation {
        let _ = writeln!(
            s,
            "{:<20}{:>10}{:>10.5}{:>10.5}{:>10.5}",
            row.configuration,
            row.features.len(),
            row.train_accuracy,
            row.test_accuracy,
            row.test_macro_accuracy
        );
    }
    let _ = writeln!(s, "k = {}, threshold = {:.6}", r.lof_k, r.threshold);
    s
}

fn eval_table(r: &EvalReport) -> String {
    let m = &r.stage1;
    let mut s = String::new();
    let _ = writeln!(s, "{:<14}{:>12}", "metric", "value");
    for (k, v) in [
        ("TP", m.tp as f64),
        ("TN", m.tn as f64),
        ("FP", m.fp as f64),
        ("FN", m.fn_ as f64),
    ] {
        let _ = writeln!(s, "{k:<14}{v:>12}");
    }
    for (k, v) in [
        ("accuracy", m.accuracy),
        ("precision", m.precision),
        ("recall", m.recall),
        ("specificity", m.specificity),
        ("MCC", m.mcc),
        ("stage2 acc", r.stage2_accuracy),
        ("stage2 macro", r.stage2_macro_accuracy),
        ("end-to-end", r.end_to_end_accuracy),
    ] {
        let _ = writeln!(s, "{k:<14}{v:>12.5}");
    }
    s
}

fn bench_table(text: &str) -> Result<String> {
    let mut s = format!("{:<28}{:>14}{:>12}{:>12}{:>12}\n", "function", "config", "mean_us", "std_us", "median_us");
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            bail!("bad bench row {line:?}");
        }
        let _ = writeln!(s, "{:<28}{:>14}{:>12}{:>12}{:>12}", f[0], f[1], f[2], f[3], f[4]);
    }
    Ok(s)
}

fn flood_table(text: &str) -> Result<String> {
    let mut per: Vec<(String, Vec<f64>, Vec<f64>, usize)> = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            bail!("bad flood row {line:?}");
        }
        if per.last().is_none_or(|p| p.0 != f[0]) {
            per.push((f[0].to_string(), Vec::new(), Vec::new(), 0));
        }
        let p = per.last_mut().unwrap();
        p.1.push(f[2].parse()?);
        match f[3] {
            "failed" => p.3 += 1,
            t => p.2.push(t.parse()?),
        }
    }
    let mut s = format!("{:<10}{:>18}{:>18}{:>8}\n", "setting", "median allowed", "median block ms", "failed");
    for (setting, allowed, block, failed) in &mut per {
        let _ = writeln!(s, "{:<10}{:>18.1}{:>18.3}{:>8}", setting, median(allowed), median(block), failed);
    }
    Ok(s)
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

