use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::diagnostics::binder_from_sums;
use crate::error::Result;

pub const SCHEMA_LINE: &str = "# schema=1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: u64,
    pub k: usize,
    pub d: usize,
    pub n: usize,
    pub delta: f64,
    pub beta: f64,
    pub nu: f64,
    pub seed: u64,
    pub algorithm: String,
    pub iterations: usize,
    pub converged: bool,
    #[serde(rename = "V_W")]
    pub v_w: f64,
    #[serde(rename = "V_H")]
    pub v_h: f64,
    #[serde(rename = "C2_sum_H")]
    pub c2_sum_h: f64,
    #[serde(rename = "C4_sum_H")]
    pub c4_sum_h: f64,
    #[serde(rename = "C2_sum_W")]
    pub c2_sum_w: f64,
    #[serde(rename = "C4_sum_W")]
    pub c4_sum_w: f64,
    pub guard_pass: bool,
    pub free_energy_final: f64,
    pub wall_ms: u64,
    /// Empty on success; otherwise the failure message.
    pub error: String,
}

impl RunRecord {
    pub fn ok(&self) -> bool {
        self.error.is_empty()
    }
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub delta: f64,
    pub beta: f64,
    pub frac_V_ge_eps: f64,
    #[serde(rename = "B_H")]
    pub b_h: f64,
    #[serde(rename = "B_W")]
    pub b_w: f64,
    pub num_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinderSummary {
    pub beta: f64,
    pub delta: f64,
    #[serde(rename = "B_H")]
    pub b_h: f64,
    #[serde(rename = "B_W")]
    pub b_w: f64,
    pub num_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub run_id: u64,
    pub delta: f64,
    pub beta: f64,
    pub seed: u64,
    pub algorithm: String,
    pub nominal: f64,
    pub actual: f64,
    pub mean_width: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub run_id: u64,
    pub delta: f64,
    pub beta: f64,
    pub coord: usize,
    pub lo: f64,
    pub hi: f64,
    pub truth: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub delta: f64,
    pub beta: f64,
    pub nominal: f64,
    pub mean_coverage: f64,
    pub num_runs: usize,
}

pub const RUN_COLUMNS: &[&str] = &[
    "run_id", "k", "d", "n", "delta", "beta", "nu", "seed", "algorithm", "iterations", "converged", "V_W", "V_H",
    "C2_sum_H", "C4_sum_H", "C2_sum_W", "C4_sum_W", "guard_pass", "free_energy_final", "wall_ms", "error",
];
pub const PHASE_COLUMNS: &[&str] = &["delta", "beta", "frac_V_ge_eps", "B_H", "B_W", "num_runs"];
pub const COVERAGE_RUN_COLUMNS: &[&str] =
    &["run_id", "delta", "beta", "seed", "algorithm", "nominal", "actual", "mean_width", "error"];
pub const INTERVAL_COLUMNS: &[&str] = &["run_id", "delta", "beta", "coord", "lo", "hi", "truth", "covered"];
pub const COVERAGE_COLUMNS: &[&str] = &["delta", "beta", "nominal", "mean_coverage", "num_runs"];
pub const BINDER_KEYS: &[&str] = &["B_H", "B_W", "beta", "delta", "num_runs"];
pub const THRESHOLD_KEYS: &[&str] = &["beta_bayes", "beta_inst", "beta_spect", "delta", "k", "nu"];

/// Writes rows as CSV preceded by the schema comment line.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], mut out: W) -> Result<()> {
    writeln!(out, "{SCHEMA_LINE}")?;
    let mut wtr = csv::Writer::from_writer(out);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_csv_file<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    write_csv(rows, BufWriter::new(File::create(path)?))
}

pub fn read_csv<T: DeserializeOwned, R: Read>(inp: R) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(inp);
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn read_csv_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_csv(BufReader::new(File::open(path)?))
}

/// Pretty JSON with object keys in sorted order.
pub fn to_sorted_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string_pretty(&v)?)
}

pub fn write_json_file<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut s = to_sorted_json(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

/// Groups records by `(delta, beta)` in order of first appearance.
fn groups(records: &[RunRecord]) -> Vec<(f64, f64, Vec<&RunRecord>)> {
    let mut out: Vec<(f64, f64, Vec<&RunRecord>)> = Vec::new();
    for r in records {
        match out.iter_mut().find(|g| g.0 == r.delta && g.1 == r.beta) {
            Some(g) => g.2.push(r),
            None => out.push((r.delta, r.beta, vec![r])),
        }
    }
    out
}

fn binder_pair(group: &[&RunRecord]) -> (f64, f64, usize) {
    let ok: Vec<_> = group.iter().filter(|r| r.ok() && r.guard_pass).collect();
    let k = group.first().map_or(2, |r| r.k);
    let sum = |f: fn(&RunRecord) -> f64| ok.iter().map(|r| f(r)).sum::<f64>();
    let bh = binder_from_sums(k, sum(|r| r.c2_sum_h), sum(|r| r.c4_sum_h), ok.len());
    let bw = binder_from_sums(k, sum(|r| r.c2_sum_w), sum(|r| r.c4_sum_w), ok.len());
    (bh.b, bw.b, ok.len())
}

/// Per-grid-point fraction of successful runs with `V_W >= eps` and Binder
/// cumulants of both factors.
pub fn aggregate_phase(records: &[RunRecord], eps: f64) -> Vec<PhaseRow> {
    groups(records)
        .into_iter()
        .map(|(delta, beta, g)| {
            let ok: Vec<_> = g.iter().filter(|r| r.ok()).collect();
            let hits = ok.iter().filter(|r| r.v_w >= eps).count();
            let frac = if ok.is_empty() { f64::NAN } else { hits as f64 / ok.len() as f64 };
            let (b_h, b_w, _) = binder_pair(&g);
            PhaseRow { delta, beta, frac_V_ge_eps: frac, b_h, b_w, num_runs: ok.len() }
        })
        .collect()
}

pub fn aggregate_binder(records: &[RunRecord]) -> Vec<BinderSummary> {
    groups(records)
        .into_iter()
        .map(|(delta, beta, g)| {
            let (b_h, b_w, num_runs) = binder_pair(&g);
            BinderSummary { beta, delta, b_h, b_w, num_runs }
        })
        .collect()
}

pub fn aggregate_coverage(records: &[CoverageRecord]) -> Vec<CoverageSummary> {
    let mut out: Vec<(f64, f64, f64, Vec<f64>)> = Vec::new();
    for r in records.iter().filter(|r| r.error.is_empty()) {
        match out.iter_mut().find(|g| g.0 == r.delta && g.1 == r.beta) {
            Some(g) => g.3.push(r.actual),
            None => out.push((r.delta, r.beta, r.nominal, vec![r.actual])),
        }
    }
    out.into_iter()
        .map(|(delta, beta, nominal, v)| CoverageSummary {
            delta,
            beta,
            nominal,
            mean_coverage: v.iter().sum::<f64>() / v.len() as f64,
            num_runs: v.len(),
        })
        .collect()
}
