use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mfl::diagnostics::{conjecture_check, v_stat};
use mfl::meanfield::{run_nmf, NmfConfig};
use mfl::model::sample_lda;
use mfl::state_evolution::thresholds;
use mfl::tap_amp::{run_amp, AmpConfig};
use mfl::{Error, ModelParams, QuadratureSpec};

fn to_py(e: Error) -> PyErr {
    match e.exit_code() {
        1 => PyValueError::new_err(e.to_string()),
        3 => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    if n == 0 || rows.iter().any(|r| r.len() != k) {
        return Err(PyValueError::new_err("expected a nonempty rectangular list of rows"));
    }
    Ok(DMatrix::from_fn(n, k, |i, j| rows[i][j]))
}

fn quad(k: usize, nodes: Option<usize>) -> QuadratureSpec {
    nodes.map_or_else(|| QuadratureSpec::default_for(k), QuadratureSpec::grid)
}

/// `k(k nu + 1)/sqrt(delta)`.
#[pyfunction]
#[pyo3(signature = (k, delta=1.0, nu=1.0))]
fn beta_spect(k: usize, delta: f64, nu: f64) -> f64 {
    mfl::state_evolution::beta_spect(k, delta, nu)
}

/// The three thresholds as a dict.
#[pyfunction]
#[pyo3(signature = (k, delta=1.0, nu=1.0, nodes=None))]
fn threshold_table(k: usize, delta: f64, nu: f64, nodes: Option<usize>) -> PyResult<BTreeMap<&'static str, f64>> {
    let t = thresholds(k, delta, nu, &quad(k, nodes)).map_err(to_py)?;
    Ok(BTreeMap::from([("beta_spect", t.beta_spect), ("beta_inst", t.beta_inst), ("beta_bayes", t.beta_bayes)]))
}

/// Scaled mean, second moment and log normalizer of the tilted Dirichlet law.
#[pyfunction]
#[pyo3(signature = (ytilde, qtilde, beta=1.0, nu=1.0, nodes=None))]
fn dir_moments(
    ytilde: Vec<f64>,
    qtilde: Vec<Vec<f64>>,
    beta: f64,
    nu: f64,
    nodes: Option<usize>,
) -> PyResult<(Vec<f64>, Vec<Vec<f64>>, f64)> {
    let k = ytilde.len();
    let m = mfl::priors::dir_moments(&DVector::from_vec(ytilde), &matrix(&qtilde)?, beta, nu, &quad(k, nodes))
        .map_err(to_py)?;
    Ok((m.mean.iter().copied().collect(), rows(&m.second), m.log_partition))
}

/// Samples `(X, W, H)` as lists of rows.
#[pyfunction]
#[pyo3(signature = (k, d, delta, beta, nu=1.0, seed=0))]
#[allow(clippy::type_complexity)]
fn sample(k: usize, d: usize, delta: f64, beta: f64, nu: f64, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let p = ModelParams::with_delta(k, d, delta, beta, nu).map_err(to_py)?;
    let ds = sample_lda(&p, seed).map_err(to_py)?;
    Ok((rows(&ds.x), rows(&ds.w), rows(&ds.h)))
}

/// Fits `x` (n×d rows) with naive mean field or AMP and returns the summary.
#[pyfunction]
#[pyo3(signature = (x, k, beta, nu=1.0, algorithm="nmf", seed=0, max_iters=None))]
fn fit(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    k: usize,
    beta: f64,
    nu: f64,
    algorithm: &str,
    seed: u64,
    max_iters: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let x = matrix(&x)?;
    let p = ModelParams::new(k, x.ncols(), x.nrows(), beta, nu).map_err(to_py)?;
    let (iterations, converged, r, rtilde) = py.detach(|| -> mfl::Result<_> {
        match algorithm {
            "nmf" => {
                let mut c = NmfConfig::new(k, seed);
                c.max_iters = max_iters.unwrap_or(c.max_iters);
                let run = run_nmf(&x, &p, &c)?;
                Ok((run.iterations, run.converged, run.state.r, run.state.rtilde))
            }
            "amp" => {
                let mut c = AmpConfig::new(k, seed);
                c.max_iters = max_iters.unwrap_or(c.max_iters);
                let run = run_amp(&x, &p, &c)?;
                Ok((run.iterations, run.converged, run.state.r, run.state.rtilde))
            }
            other => Err(Error::InvalidParam(format!("unknown algorithm {other:?}"))),
        }
    })
    .map_err(to_py)?;
    let out = pyo3::types::PyDict::new(py);
    out.set_item("iterations", iterations)?;
    out.set_item("converged", converged)?;
    out.set_item("V_W", v_stat(&rtilde))?;
    out.set_item("V_H", v_stat(&r))?;
    out.set_item("r", rows(&r))?;
    out.set_item("rtilde", rows(&rtilde))?;
    Ok(out.into_any().unbind())
}

/// `(sigma_gamma, bound, holds)` at a single `q`.
#[pyfunction]
#[pyo3(signature = (q, k=2, nu=1.0))]
fn conjecture(q: f64, k: usize, nu: f64) -> PyResult<(f64, f64, bool)> {
    let r = conjecture_check(q, nu, k, &QuadratureSpec::default_for(k)).map_err(to_py)?;
    Ok((r.sigma_gamma, r.bound, r.holds))
}

#[pymodule]
fn mfl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(beta_spect, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_table, m)?)?;
    m.add_function(wrap_pyfunction!(dir_moments, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(conjecture, m)?)?;
    Ok(())
}
