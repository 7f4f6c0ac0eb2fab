use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::config::{Algorithm, ExperimentConfig};
use super::records::*;
use crate::diagnostics::{coverage_w1, instance_overlap_sums, v_stat};
use crate::error::{Error, Result};
use crate::meanfield::run_nmf;
use crate::model::{sample_lda, Dataset, ModelParams};
use crate::quadrature::QuadratureSpec;
use crate::rng;
use crate::state_evolution::{thresholds, Thresholds};
use crate::tap_amp::{run_amp, tap_free_energy};

/// Noise level of the Binder overlaps.
pub const BINDER_ETA: f64 = 1e-4;
/// Number of `w_{a,1}` coordinates checked per coverage run.
pub const COVERAGE_COORDS: usize = 100;

/// One grid cell and replicate of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Job {
    pub run_id: u64,
    pub delta: f64,
    pub beta: f64,
    pub seed: u64,
}

/// All jobs of a sweep in `(delta, beta, replicate)` order. Seeds are
/// `base_seed` xor a hash of the three indices and are checked for collisions.
pub fn jobs(cfg: &ExperimentConfig) -> Result<Vec<Job>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (di, &delta) in cfg.delta_grid.iter().enumerate() {
        for (bi, &beta) in cfg.beta_grid.iter().enumerate() {
            for r in 0..cfg.replicates {
                let seed = rng::replicate_seed(cfg.base_seed, &[di as u64, bi as u64, r as u64]);
                if !seen.insert(seed) {
                    return Err(Error::Config(format!("seed collision at ({di}, {bi}, {r})")));
                }
                out.push(Job { run_id: out.len() as u64, delta, beta, seed });
            }
        }
    }
    Ok(out)
}

/// Point estimates and weight-side tilts of one fitted instance.
pub struct Fit {
    pub iterations: usize,
    pub converged: bool,
    /// d×k topic estimate.
    pub r: DMatrix<f64>,
    /// n×k weight estimate.
    pub rtilde: DMatrix<f64>,
    pub mtilde: DMatrix<f64>,
    pub qtilde: DMatrix<f64>,
    pub free_energy: f64,
}

pub fn fit(cfg: &ExperimentConfig, ds: &Dataset, params: &ModelParams, seed: u64) -> Result<Fit> {
    match cfg.algorithm {
        Algorithm::Nmf => {
            let run = run_nmf(&ds.x, params, &cfg.nmf_config(seed))?;
            let free_energy = run.trajectory.last().map_or(f64::NAN, |t| t.free_energy);
            let s = run.state;
            Ok(Fit {
                iterations: run.iterations,
                converged: run.converged,
                r: s.r,
                rtilde: s.rtilde,
                mtilde: s.mtilde,
                qtilde: s.qtilde,
                free_energy,
            })
        }
        Algorithm::Amp => {
            let ac = cfg.amp_config(seed);
            let run = run_amp(&ds.x, params, &ac)?;
            let s = run.state;
            let free_energy = match tap_free_energy(&s.r, &s.rtilde, &ds.x, params, &ac.quad) {
                Ok(v) => v,
                Err(e) => {
                    log::warn!("TAP free energy unavailable for seed {seed}: {e}");
                    f64::NAN
                }
            };
            Ok(Fit {
                iterations: run.iterations,
                converged: run.converged,
                r: s.r,
                rtilde: s.rtilde,
                mtilde: s.mtilde,
                qtilde: s.qtilde,
                free_energy,
            })
        }
    }
}

fn failed_record(cfg: &ExperimentConfig, job: &Job, n: usize, err: &Error) -> RunRecord {
    log::warn!("run {} failed: {err}", job.run_id);
    RunRecord {
        run_id: job.run_id,
        k: cfg.k,
        d: cfg.d,
        n,
        delta: job.delta,
        beta: job.beta,
        nu: cfg.nu,
        seed: job.seed,
        algorithm: cfg.algorithm.as_str().into(),
        iterations: 0,
        converged: false,
        v_w: f64::NAN,
        v_h: f64::NAN,
        c2_sum_h: f64::NAN,
        c4_sum_h: f64::NAN,
        c2_sum_w: f64::NAN,
        c4_sum_w: f64::NAN,
        guard_pass: false,
        free_energy_final: f64::NAN,
        wall_ms: 0,
        error: err.to_string(),
    }
}

fn try_replicate(cfg: &ExperimentConfig, job: &Job, params: &ModelParams) -> Result<RunRecord> {
    let start = Instant::now();
    let ds = sample_lda(params, job.seed)?;
    let f = fit(cfg, &ds, params, job.seed)?;
    let sh = instance_overlap_sums(&ds.h, &f.r, BINDER_ETA, job.seed, 0)?;
    let sw = instance_overlap_sums(&ds.w, &f.rtilde, BINDER_ETA, job.seed, 1)?;
    let (c2h, c4h) = sh.unwrap_or((f64::NAN, f64::NAN));
    let (c2w, c4w) = sw.unwrap_or((f64::NAN, f64::NAN));
    let guard_pass = [c2h, c4h, c2w, c4w].iter().all(|v| v.is_finite());
    Ok(RunRecord {
        run_id: job.run_id,
        k: params.k,
        d: params.d,
        n: params.n,
        delta: job.delta,
        beta: job.beta,
        nu: params.nu,
        seed: job.seed,
        algorithm: cfg.algorithm.as_str().into(),
        iterations: f.iterations,
        converged: f.converged,
        v_w: v_stat(&f.rtilde),
        v_h: v_stat(&f.r),
        c2_sum_h: c2h,
        c4_sum_h: c4h,
        c2_sum_w: c2w,
        c4_sum_w: c4w,
        guard_pass,
        free_energy_final: f.free_energy,
        wall_ms: if cfg.timing { start.elapsed().as_millis() as u64 } else { 0 },
        error: String::new(),
    })
}

/// Samples and fits one replicate. Failures become records with the error
/// message set.
pub fn run_replicate(cfg: &ExperimentConfig, job: &Job) -> RunRecord {
    let n = (job.delta * cfg.d as f64).round().max(1.0) as usize;
    let params = match ModelParams::with_delta(cfg.k, cfg.d, job.delta, job.beta, cfg.nu) {
        Ok(p) => p,
        Err(e) => return failed_record(cfg, job, n, &e),
    };
    try_replicate(cfg, job, &params).unwrap_or_else(|e| failed_record(cfg, job, n, &e))
}

/// Runs every replicate of the sweep in parallel; the result is in job order.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let jobs = jobs(cfg)?;
    Ok(jobs.par_iter().map(|j| run_replicate(cfg, j)).collect())
}

/// Writes `runs.csv` (one row per replicate), `phase_diagram.csv` (per grid
/// point) and `config.json` into the output directory and returns the path
/// of the aggregate.
pub fn run_phase_diagram(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let records = run_sweep(cfg)?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir)?;
    write_json_file(cfg, &dir.join("config.json"))?;
    write_csv_file(&records, &dir.join("runs.csv"))?;
    let agg = aggregate_phase(&records, cfg.algorithm.v_epsilon());
    let path = dir.join("phase_diagram.csv");
    write_csv_file(&agg, &path)?;
    Ok(path)
}

/// Evenly spaced rows `0, n/c, 2n/c, …` with `c = min(100, n)`.
pub fn coverage_coords(n: usize) -> Vec<usize> {
    let c = COVERAGE_COORDS.min(n);
    (0..c).map(|i| i * n / c).collect()
}

struct CoverageOutcome {
    record: CoverageRecord,
    intervals: Vec<IntervalRecord>,
}

fn try_coverage(cfg: &ExperimentConfig, job: &Job, alpha: f64) -> Result<CoverageOutcome> {
    let params = ModelParams::with_delta(cfg.k, cfg.d, job.delta, job.beta, cfg.nu)?;
    let ds = sample_lda(&params, job.seed)?;
    let f = fit(cfg, &ds, &params, job.seed)?;
    let coords = coverage_coords(params.n);
    let rep = coverage_w1(&f.mtilde, &f.qtilde, &f.rtilde, &ds.w, &params, alpha, &coords, &cfg.quad())?;
    let intervals = coords
        .iter()
        .zip(&rep.intervals)
        .map(|(&a, &(lo, hi))| {
            let truth = ds.w[(a, 0)];
            IntervalRecord {
                run_id: job.run_id,
                delta: job.delta,
                beta: job.beta,
                coord: a,
                lo,
                hi,
                truth,
                covered: truth >= lo && truth <= hi,
            }
        })
        .collect();
    Ok(CoverageOutcome {
        record: CoverageRecord {
            run_id: job.run_id,
            delta: job.delta,
            beta: job.beta,
            seed: job.seed,
            algorithm: cfg.algorithm.as_str().into(),
            nominal: rep.nominal,
            actual: rep.actual,
            mean_width: rep.mean_width,
            error: String::new(),
        },
        intervals,
    })
}

/// Per-replicate coverage records and interval rows, in job order.
pub fn coverage_sweep(cfg: &ExperimentConfig, alpha: f64) -> Result<(Vec<CoverageRecord>, Vec<IntervalRecord>)> {
    cfg.validate()?;
    if cfg.k != 2 {
        return Err(Error::InvalidParam(format!("coverage experiments need k = 2, got {}", cfg.k)));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParam(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let jobs = jobs(cfg)?;
    let outcomes: Vec<CoverageOutcome> = jobs
        .par_iter()
        .map(|j| {
            try_coverage(cfg, j, alpha).unwrap_or_else(|e| {
                log::warn!("coverage run {} failed: {e}", j.run_id);
                CoverageOutcome {
                    record: CoverageRecord {
                        run_id: j.run_id,
                        delta: j.delta,
                        beta: j.beta,
                        seed: j.seed,
                        algorithm: cfg.algorithm.as_str().into(),
                        nominal: 1.0 - alpha,
                        actual: f64::NAN,
                        mean_width: f64::NAN,
                        error: e.to_string(),
                    },
                    intervals: Vec::new(),
                }
            })
        })
        .collect();
    let mut records = Vec::with_capacity(outcomes.len());
    let mut intervals = Vec::new();
    for o in outcomes {
        records.push(o.record);
        intervals.extend(o.intervals);
    }
    Ok((records, intervals))
}

/// Writes `coverage_runs.csv`, `coverage_intervals.csv` and the per-grid-point
/// `coverage.csv`; returns the path of the last.
pub fn run_coverage(cfg: &ExperimentConfig, alpha: f64) -> Result<PathBuf> {
    let (records, intervals) = coverage_sweep(cfg, alpha)?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir)?;
    write_json_file(cfg, &dir.join("config.json"))?;
    write_csv_file(&records, &dir.join("coverage_runs.csv"))?;
    write_csv_file(&intervals, &dir.join("coverage_intervals.csv"))?;
    let path = dir.join("coverage.csv");
    write_csv_file(&aggregate_coverage(&records), &path)?;
    Ok(path)
}

/// Thresholds for every `(k, delta)` pair, in list order.
pub fn threshold_table(k_list: &[usize], delta_list: &[f64], nu: f64, quad: Option<QuadratureSpec>) -> Result<Vec<Thresholds>> {
    if k_list.is_empty() || delta_list.is_empty() {
        return Err(Error::InvalidParam("k and delta lists must be nonempty".into()));
    }
    let pairs: Vec<(usize, f64)> = k_list.iter().flat_map(|&k| delta_list.iter().map(move |&d| (k, d))).collect();
    pairs
        .par_iter()
        .map(|&(k, delta)| thresholds(k, delta, nu, &quad.unwrap_or_else(|| QuadratureSpec::default_for(k))))
        .collect()
}

/// Writes the table as a JSON array to `path`.
pub fn run_threshold_table(
    k_list: &[usize],
    delta_list: &[f64],
    nu: f64,
    quad: Option<QuadratureSpec>,
    path: &Path,
) -> Result<PathBuf> {
    let table = threshold_table(k_list, delta_list, nu, quad)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_json_file(&table, path)?;
    Ok(path.to_path_buf())
}

/// Binder summaries per grid point from a `runs.csv` file.
pub fn binder_from_runs(path: &Path) -> Result<Vec<BinderSummary>> {
    let records: Vec<RunRecord> = read_csv_file(path)?;
    Ok(aggregate_binder(&records))
}
