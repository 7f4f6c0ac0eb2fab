use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use mfl::diagnostics::conjecture_check;
use mfl::harness::records::{to_sorted_json, write_csv};
use mfl::harness::{self, parse_quad, ExperimentConfig};
use mfl::meanfield::{run_nmf, NmfConfig};
use mfl::model::{sample_lda, sample_z2, Dataset, ModelParams};
use mfl::quadrature::QuadratureSpec;
use mfl::state_evolution::{se_trajectory, SEState, SeEngine, SeParams};
use mfl::tap_amp::{run_amp, AmpConfig, Onsager};
use mfl::z2sync::{run_z2_nmf, z2_coverage, z2_hessian_min_eig, Z2State};
use mfl::{rng, Error, Result};

#[derive(Parser)]
#[command(name = "mfl", version, about = "Mean field, TAP/AMP and state evolution experiments")]
struct Cli {
    /// Experiment configuration (key=value lines or a JSON object).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed (base seed for sweeps).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "MFL_THREADS")]
    threads: Option<usize>,
    /// Output file or directory; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 400)]
    d: usize,
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    #[arg(long)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    nu: f64,
}

#[derive(Args, Clone)]
struct IterArgs {
    /// Dataset in the binary format written by `gen`; sampled when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    min_iters: Option<usize>,
    #[arg(long)]
    conv_threshold: Option<f64>,
    #[arg(long)]
    init_epsilon: Option<f64>,
    /// Quadrature, `grid:N` or `mc:N`.
    #[arg(long)]
    quad: Option<String>,
}

#[derive(Args, Clone)]
struct SweepArgs {
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    nu: Option<f64>,
    /// Comma-separated aspect ratios.
    #[arg(long)]
    delta_grid: Option<String>,
    /// Comma-separated signal strengths.
    #[arg(long)]
    beta_grid: Option<String>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    quad: Option<String>,
    /// Record wall-clock times per replicate.
    #[arg(long)]
    timing: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SeInit {
    Zero,
    Uninformative,
    Informative,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnsagerArg {
    History,
    Accumulated,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a dataset; `.csv` output writes X only, anything else the binary dump.
    Gen(ModelArgs),
    /// Naive mean field; writes the trajectory CSV.
    Nmf {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        iter: IterArgs,
    },
    /// Damped AMP; writes the trajectory CSV.
    Amp {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        iter: IterArgs,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, value_enum)]
        onsager: Option<OnsagerArg>,
        /// Evaluate the TAP free energy at every iteration.
        #[arg(long)]
        track_free_energy: bool,
    },
    /// State evolution; writes M and M̃ entries per iteration.
    Se {
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        nu: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long, value_enum, default_value_t = SeInit::Informative)]
        init: SeInit,
        #[arg(long, default_value_t = 20)]
        iters: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Thresholds; comma-separated lists of k and delta give a table.
    Thresholds {
        #[arg(long, default_value = "2")]
        k: String,
        #[arg(long, default_value = "1")]
        delta: String,
        #[arg(long, default_value_t = 1.0)]
        nu: f64,
        #[arg(long)]
        quad: Option<String>,
    },
    /// Sweep over (delta, beta) with replicates; writes runs.csv and phase_diagram.csv.
    PhaseDiagram(SweepArgs),
    /// Binder cumulants per grid point from a runs.csv file.
    Binder {
        #[arg(long)]
        input: PathBuf,
    },
    /// Credible-interval coverage sweep (k = 2).
    Coverage {
        #[command(flatten)]
        sweep: SweepArgs,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
    },
    /// Z2 synchronization: Hessian spectra at 0 and the mean field fixed point.
    Z2 {
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long)]
        lambda: f64,
        /// Also compute the TAP Hessian eigenvalue.
        #[arg(long)]
        tap: bool,
        #[arg(long, default_value_t = 1000)]
        max_iters: usize,
    },
    /// Checks sigma(q) gamma(q) <= 2/q on a log grid of q.
    Conjecture {
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 1.0)]
        nu: f64,
        #[arg(long, default_value_t = 0.1)]
        q_min: f64,
        #[arg(long, default_value_t = 10.0)]
        q_max: f64,
        #[arg(long, default_value_t = 41)]
        points: usize,
    },
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    match out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|q| !q.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            Ok(Box::new(BufWriter::new(File::create(p)?)))
        }
        None => Ok(Box::new(std::io::stdout().lock())),
    }
}

fn emit_json<T: serde::Serialize>(value: &T, out: &Option<PathBuf>) -> Result<()> {
    let mut w = sink(out)?;
    writeln!(w, "{}", to_sorted_json(value)?)?;
    w.flush()?;
    Ok(())
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| Error::InvalidParam(format!("bad {what} value {t:?}"))))
        .collect()
}

fn dataset(model: &ModelArgs, input: &Option<PathBuf>, seed: u64) -> Result<(ModelParams, Dataset)> {
    match input {
        Some(path) => {
            let ds = Dataset::read_binary(std::io::BufReader::new(File::open(path)?))?;
            let p = ModelParams::new(ds.k(), ds.x.ncols(), ds.x.nrows(), model.beta, model.nu)?;
            Ok((p, ds))
        }
        None => {
            let p = ModelParams::with_delta(model.k, model.d, model.delta, model.beta, model.nu)?;
            let ds = sample_lda(&p, seed)?;
            Ok((p, ds))
        }
    }
}

fn quad_or_default(q: &Option<String>, k: usize) -> Result<QuadratureSpec> {
    q.as_deref().map_or_else(|| Ok(QuadratureSpec::default_for(k)), parse_quad)
}

fn sweep_config(cli: &Cli, s: &SweepArgs) -> Result<ExperimentConfig> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            pairs.push((k.to_string(), v));
        }
    };
    put("algorithm", s.algorithm.clone());
    put("k", s.k.map(|v| v.to_string()));
    put("d", s.d.map(|v| v.to_string()));
    put("nu", s.nu.map(|v| v.to_string()));
    put("delta_grid", s.delta_grid.clone());
    put("beta_grid", s.beta_grid.clone());
    put("replicates", s.replicates.map(|v| v.to_string()));
    put("quad", s.quad.clone());
    put("base_seed", cli.seed.map(|v| v.to_string()));
    put("output_dir", cli.out.as_ref().map(|p| p.display().to_string()));
    if s.timing {
        put("timing", Some("true".into()));
    }
    ExperimentConfig::load(cli.config.as_deref(), &pairs)
}

fn write_matrix_cols(header: &mut Vec<String>, prefix: &str, k: usize) {
    for i in 0..k {
        for j in 0..k {
            header.push(format!("{prefix}_{i}{j}"));
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.cmd {
        Cmd::Gen(m) => {
            let p = ModelParams::with_delta(m.k, m.d, m.delta, m.beta, m.nu)?;
            let ds = sample_lda(&p, seed)?;
            let path = cli.out.clone().ok_or_else(|| Error::InvalidParam("gen needs --out".into()))?;
            let w = sink(&Some(path.clone()))?;
            if path.extension().is_some_and(|e| e == "csv") {
                ds.write_csv(w)
            } else {
                ds.write_binary(w)
            }
        }
        Cmd::Nmf { model, iter } => {
            let (p, ds) = dataset(model, &iter.input, seed)?;
            let mut c = NmfConfig::new(p.k, seed);
            c.quad = quad_or_default(&iter.quad, p.k)?;
            c.max_iters = iter.max_iters.unwrap_or(c.max_iters);
            c.min_iters = iter.min_iters.unwrap_or(c.min_iters);
            c.conv_threshold = iter.conv_threshold.unwrap_or(c.conv_threshold);
            c.init_epsilon = iter.init_epsilon.unwrap_or(c.init_epsilon);
            let run = run_nmf(&ds.x, &p, &c)?;
            log::info!("nmf: {} iterations, converged {}", run.iterations, run.converged);
            write_csv_plain(&run.trajectory, &cli.out)
        }
        Cmd::Amp { model, iter, gamma, onsager, track_free_energy } => {
            let (p, ds) = dataset(model, &iter.input, seed)?;
            let mut c = AmpConfig::new(p.k, seed);
            c.quad = quad_or_default(&iter.quad, p.k)?;
            c.gamma = gamma.unwrap_or(c.gamma);
            c.onsager = match onsager {
                Some(OnsagerArg::Accumulated) => Onsager::Accumulated,
                Some(OnsagerArg::History) => Onsager::History,
                None => c.onsager,
            };
            c.max_iters = iter.max_iters.unwrap_or(c.max_iters);
            c.min_iters = iter.min_iters.unwrap_or(c.min_iters);
            c.conv_threshold = iter.conv_threshold.unwrap_or(c.conv_threshold);
            c.init_epsilon = iter.init_epsilon.unwrap_or(c.init_epsilon);
            c.track_free_energy = *track_free_energy;
            let run = run_amp(&ds.x, &p, &c)?;
            log::info!("amp: {} iterations, converged {}", run.iterations, run.converged);
            write_csv_plain(&run.trajectory, &cli.out)
        }
        Cmd::Se { k, delta, nu, beta, init, iters, samples } => {
            let p = SeParams::new(*k, *delta, *nu, *beta)?;
            let m0 = match init {
                SeInit::Zero => SEState::zero(*k).m,
                SeInit::Uninformative => SEState::uninformative(&p).m,
                SeInit::Informative => DMatrix::identity(*k, *k) * 10.0,
            };
            let engine = SeEngine::new(*k, *nu, *samples, seed)?;
            let traj = se_trajectory(&m0, &p, &QuadratureSpec::default_for(*k), &engine, *iters)?;
            let mut header = vec!["iter".to_string()];
            write_matrix_cols(&mut header, "M", *k);
            write_matrix_cols(&mut header, "Mt", *k);
            let mut w = sink(&cli.out)?;
            writeln!(w, "{}", harness::SCHEMA_LINE)?;
            let mut wtr = csv::Writer::from_writer(w);
            wtr.write_record(&header)?;
            for (t, s) in traj.iter().enumerate() {
                let mut row = vec![t.to_string()];
                row.extend(s.m.transpose().iter().map(|v| v.to_string()));
                row.extend(s.mtilde.transpose().iter().map(|v| v.to_string()));
                wtr.write_record(&row)?;
            }
            wtr.flush()?;
            Ok(())
        }
        Cmd::Thresholds { k, delta, nu, quad } => {
            let ks: Vec<usize> = parse_list(k, "k")?;
            let ds: Vec<f64> = parse_list(delta, "delta")?;
            let q = quad.as_deref().map(parse_quad).transpose()?;
            let table = harness::threshold_table(&ks, &ds, *nu, q)?;
            if table.len() == 1 {
                emit_json(&table[0], &cli.out)
            } else {
                emit_json(&table, &cli.out)
            }
        }
        Cmd::PhaseDiagram(s) => {
            let cfg = sweep_config(cli, s)?;
            let path = harness::run_phase_diagram(&cfg)?;
            println!("{}", path.display());
            Ok(())
        }
        Cmd::Binder { input } => emit_json(&harness::binder_from_runs(input)?, &cli.out),
        Cmd::Coverage { sweep, alpha } => {
            let cfg = sweep_config(cli, sweep)?;
            let path = harness::run_coverage(&cfg, *alpha)?;
            println!("{}", path.display());
            Ok(())
        }
        Cmd::Z2 { n, lambda, tap, max_iters } => emit_json(&z2_report(*n, *lambda, seed, *tap, *max_iters)?, &cli.out),
        Cmd::Conjecture { k, nu, q_min, q_max, points } => {
            if !(*q_min > 0.0 && q_max >= q_min) || *points == 0 {
                return Err(Error::InvalidParam("need 0 < q_min <= q_max and points >= 1".into()));
            }
            let quad = QuadratureSpec::default_for(*k);
            let step = if *points > 1 { (q_max / q_min).ln() / (*points - 1) as f64 } else { 0.0 };
            let rows = (0..*points)
                .map(|i| conjecture_check(q_min * (step * i as f64).exp(), *nu, *k, &quad))
                .collect::<Result<Vec<_>>>()?;
            emit_json(&rows, &cli.out)
        }
    }
}

fn write_csv_plain<T: serde::Serialize>(rows: &[T], out: &Option<PathBuf>) -> Result<()> {
    write_csv(rows, sink(out)?)
}

#[derive(serde::Serialize)]
struct Z2Report {
    lambda: f64,
    n: usize,
    seed: u64,
    norm_sq_over_n: f64,
    min_eig_naive: f64,
    min_eig_tap: Option<f64>,
    coverage_actual: f64,
    coverage_claimed: f64,
    iterations: usize,
    converged: bool,
}

/// Runs the mean field iteration from a small random start and reports the
/// Hessian spectra at `m = 0` and the coverage at the end point.
fn z2_report(n: usize, lambda: f64, seed: u64, tap: bool, max_iters: usize) -> Result<Z2Report> {
    let inst = sample_z2(n, lambda, seed)?;
    let zero = Z2State::zeros(n);
    let mut g = rng::stream(seed, rng::STREAM_INIT);
    let init = Z2State::new(DVector::from_fn(n, |_, _| g.random_range(-0.01..0.01)))?;
    let run = run_z2_nmf(&init, &inst, max_iters)?;
    let (coverage_actual, coverage_claimed) = z2_coverage(&run.state, &inst.sigma)?;
    Ok(Z2Report {
        lambda,
        n,
        seed,
        norm_sq_over_n: run.state.norm_sq_over_n(),
        min_eig_naive: z2_hessian_min_eig(&zero, &inst, false)?,
        min_eig_tap: if tap { Some(z2_hessian_min_eig(&zero, &inst, true)?) } else { None },
        coverage_actual,
        coverage_claimed,
        iterations: run.iterations,
        converged: run.converged,
    })
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
