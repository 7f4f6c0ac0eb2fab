//! Discrete approximations of the Dir(nu; k) law used to integrate tilted
//! Dirichlet densities.
//!
//! The grid scheme writes the Dirichlet vector through stick breaking,
//! `w_1 = u_1`, `w_j = u_j * prod_{l<j} (1 - u_l)`, with independent
//! `u_j ~ Beta(nu, (k - j) nu)`, and takes a tensor product of composite
//! Gauss–Legendre rules for the Beta factors. Each factor is split at 1/2 and
//! non-smooth endpoint behaviour of the Beta density (non-integer exponents)
//! is removed by a power substitution on the half touching that endpoint. Weights are normalized so
//! the rule is itself a probability measure on the simplex.

use std::collections::HashMap;
use std::sync::{Arc, LazyLock, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::sample_dirichlet;
use crate::rng;

const PANEL_ORDER: usize = 8;
const MAX_GRID_NODES: usize = 1 << 22;
const MC_SEED: u64 = 0x5eed_d1a1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Grid,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub scheme: Scheme,
    /// Grid points per simplex dimension, or Monte Carlo sample count.
    pub nodes: usize,
    /// Target relative error for the refinement check of standalone calls.
    pub tolerance: f64,
}

impl QuadratureSpec {
    pub fn grid(nodes: usize) -> Self {
        QuadratureSpec { scheme: Scheme::Grid, nodes, tolerance: 1e-8 }
    }

    pub fn monte_carlo(samples: usize) -> Self {
        QuadratureSpec { scheme: Scheme::MonteCarlo, nodes: samples, tolerance: 1e-2 }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    /// 512 grid nodes for k = 2, 64 per dimension for k = 3, Monte Carlo beyond.
    pub fn default_for(k: usize) -> Self {
        match k {
            0..=2 => Self::grid(512),
            3 => Self::grid(64),
            _ => Self::monte_carlo(100_000),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.scheme {
            Scheme::Grid if self.nodes < 64 => {
                Err(Error::InvalidParam(format!("grid quadrature needs >= 64 nodes, got {}", self.nodes)))
            }
            Scheme::MonteCarlo if self.nodes < 10_000 => Err(Error::InvalidParam(format!(
                "Monte Carlo quadrature needs >= 10^4 samples, got {}",
                self.nodes
            ))),
            _ if !(self.tolerance > 0.0) => Err(Error::InvalidParam("tolerance must be positive".into())),
            _ => Ok(()),
        }
    }

    /// The same scheme at twice the resolution.
    pub fn refined(&self) -> Self {
        QuadratureSpec { nodes: self.nodes * 2, ..*self }
    }
}

/// A weighted point set on the simplex approximating Dir(nu; k).
#[derive(Debug, Clone)]
pub struct SimplexRule {
    pub k: usize,
    pub nu: f64,
    /// Row-major `len × k` node coordinates.
    pub points: Vec<f64>,
    /// Log weights, normalized so that the weights sum to one.
    pub log_weights: Vec<f64>,
}

impl SimplexRule {
    pub fn new(k: usize, nu: f64, spec: &QuadratureSpec) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidParam("k must be at least 2".into()));
        }
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::InvalidParam(format!("nu must be > 0, got {nu}")));
        }
        spec.validate()?;
        match spec.scheme {
            Scheme::Grid => Self::grid(k, nu, spec.nodes),
            Scheme::MonteCarlo => Ok(Self::monte_carlo(k, nu, spec.nodes)),
        }
    }

    /// Tensor grid without the minimum-size check of [`QuadratureSpec`], for
    /// outer integrals whose integrand is smooth.
    pub fn coarse_grid(k: usize, nu: f64, nodes: usize) -> Result<Self> {
        if k < 2 || !(nu > 0.0) || nodes == 0 {
            return Err(Error::InvalidParam("coarse grid needs k >= 2, nu > 0, nodes > 0".into()));
        }
        Self::grid(k, nu, nodes)
    }

    fn grid(k: usize, nu: f64, nodes: usize) -> Result<Self> {
        let total = (0..k - 1).try_fold(1usize, |acc, _| acc.checked_mul(nodes));
        match total {
            Some(t) if t <= MAX_GRID_NODES => {}
            _ => {
                return Err(Error::InvalidParam(format!(
                    "grid with {nodes} nodes per dimension is too large for k = {k}"
                )))
            }
        }
        let factors: Vec<(Vec<f64>, Vec<f64>)> =
            (1..k).map(|j| beta_rule(nu, (k - j) as f64 * nu, nodes)).collect();
        let m = factors[0].0.len();
        let total = m.pow((k - 1) as u32);
        let mut points = Vec::with_capacity(total * k);
        let mut log_weights = Vec::with_capacity(total);
        let mut idx = vec![0usize; k - 1];
        for _ in 0..total {
            let mut rest = 1.0;
            let mut lw = 0.0;
            for (j, &i) in idx.iter().enumerate() {
                let u = factors[j].0[i];
                points.push(rest * u);
                rest *= 1.0 - u;
                lw += factors[j].1[i];
            }
            points.push(rest);
            log_weights.push(lw);
            for j in (0..k - 1).rev() {
                idx[j] += 1;
                if idx[j] < m {
                    break;
                }
                idx[j] = 0;
            }
        }
        normalize(&mut log_weights);
        Ok(SimplexRule { k, nu, points, log_weights })
    }

    fn monte_carlo(k: usize, nu: f64, samples: usize) -> Self {
        let mut r = rng::stream(MC_SEED, rng::STREAM_QUAD);
        let mut points = vec![0.0; samples * k];
        for s in 0..samples {
            sample_dirichlet(&mut r, k, nu, &mut points[s * k..(s + 1) * k]);
        }
        let lw = -(samples as f64).ln();
        SimplexRule { k, nu, points, log_weights: vec![lw; samples] }
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.k..(j + 1) * self.k]
    }
}

fn normalize(lw: &mut [f64]) {
    let z = crate::linalg::log_sum_exp(lw);
    for v in lw.iter_mut() {
        *v -= z;
    }
}

type RuleKey = (usize, u64, Scheme, usize);

static RULES: LazyLock<Mutex<HashMap<RuleKey, Arc<SimplexRule>>>> = LazyLock::new(|| Mutex::new(HashMap::new()));

/// Shared, memoized rule for `(k, nu, spec)`.
pub fn rule(k: usize, nu: f64, spec: &QuadratureSpec) -> Result<Arc<SimplexRule>> {
    let key = (k, nu.to_bits(), spec.scheme, spec.nodes);
    if let Some(r) = RULES.lock().expect("rule cache poisoned").get(&key) {
        return Ok(r.clone());
    }
    let built = Arc::new(SimplexRule::new(k, nu, spec)?);
    let mut cache = RULES.lock().expect("rule cache poisoned");
    Ok(cache.entry(key).or_insert(built).clone())
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * z * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Gauss–Hermite rule for the standard normal law (weights sum to one), by
/// the Golub–Welsch eigenvalue method.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jac = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = nalgebra::SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> =
        (0..n).map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Composite Gauss–Legendre rule on [lo, hi] with `panels` panels.
fn composite(lo: f64, hi: f64, panels: usize) -> (Vec<f64>, Vec<f64>) {
    let (gx, gw) = gauss_legendre(PANEL_ORDER);
    let h = (hi - lo) / panels as f64;
    let mut x = Vec::with_capacity(panels * PANEL_ORDER);
    let mut w = Vec::with_capacity(panels * PANEL_ORDER);
    for p in 0..panels {
        let a = lo + p as f64 * h;
        for (xi, wi) in gx.iter().zip(&gw) {
            x.push(a + 0.5 * h * (xi + 1.0));
            w.push(0.5 * h * wi);
        }
    }
    (x, w)
}

/// Smoothness order targeted by the endpoint substitution.
const ENDPOINT_ORDER: f64 = 6.0;

/// Distance `v ∈ (0, 1/2]` from an endpoint whose density factor is
/// `v^(c-1)`, and the log of `v^(c-1)` times the substitution Jacobian. For
/// non-integer `c` the substitution `v = s^p / 2` with integer `p ≥ 6/c`
/// turns the factor into `s^(pc-1)`, which has at least five derivatives.
fn endpoint_node(c: f64, s: f64, w: f64) -> (f64, f64) {
    let half = 0.5f64.ln();
    if c.fract() != 0.0 {
        let p = (ENDPOINT_ORDER / c).ceil().max(1.0);
        (0.5 * s.powf(p), w.ln() + c * half + p.ln() + (p * c - 1.0) * s.ln())
    } else {
        let v = 0.5 * s;
        (v, (0.5 * w).ln() + (c - 1.0) * v.ln())
    }
}

/// Nodes on (0, 1) and unnormalized log weights for the Beta(a, b) law.
pub fn beta_rule(a: f64, b: f64, nodes: usize) -> (Vec<f64>, Vec<f64>) {
    let panels = nodes.div_ceil(2 * PANEL_ORDER).max(1);
    let (s, sw) = composite(0.0, 1.0, panels);
    let mut t = Vec::with_capacity(2 * s.len());
    let mut lw = Vec::with_capacity(2 * s.len());
    // left half [0, 1/2]
    for (si, wi) in s.iter().zip(&sw) {
        let (u, l) = endpoint_node(a, *si, *wi);
        t.push(u);
        lw.push(l + (b - 1.0) * (1.0 - u).ln());
    }
    // right half [1/2, 1], traversed from the right endpoint
    for (si, wi) in s.iter().zip(&sw).rev() {
        let (v, l) = endpoint_node(b, *si, *wi);
        t.push(1.0 - v);
        lw.push(l + (a - 1.0) * (1.0 - v).ln());
    }
    (t, lw)
}
