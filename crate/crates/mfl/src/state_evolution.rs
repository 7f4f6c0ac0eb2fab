//! State evolution for AMP on the Gaussian-topic model, the replica-symmetric
//! free energy and the thresholds `beta_spect`, `beta_Bayes`.
//!
//! The recursion reads `M̃_t = beta (I+M_t)^-1 M_t` (Gaussian side, exact) and
//! `M_{t+1} = delta E{F̃(M̃_t w + M̃_t^{1/2} z; M̃_t)^⊗2}`, the expectation being
//! taken over `w ~ Dir(nu;k)` and `z ~ N(0, I_k)` by Monte Carlo with a fixed
//! sample set, so that runs at different `beta` share random numbers.
//!
//! On the subspace `M = alpha I + gamma J` the recursion is one dimensional:
//! shifts of the tilt along `1_k` do not change a law on the simplex, so the
//! weight channel only sees `a = beta alpha/(1+alpha)` through
//! `y = a w + sqrt(a) P⊥ z`. [`SymmetricChannel`] tabulates the two scalar
//! functions of `a` this requires and is used by [`beta_bayes`].

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{clip_psd, spd_inverse, sym_sqrt, symmetrize};
use crate::model::{sample_dirichlet, ModelParams};
use crate::priors::{dirichlet_rows, DirichletTilt};
use crate::quadrature::{self, gauss_hermite, QuadratureSpec, SimplexRule};
use crate::rng;

/// `k (k nu + 1) / sqrt(delta)`.
pub fn beta_spect(k: usize, delta: f64, nu: f64) -> f64 {
    let kf = k as f64;
    kf * (kf * nu + 1.0) / delta.sqrt()
}

/// The parameters state evolution depends on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeParams {
    pub k: usize,
    pub delta: f64,
    pub nu: f64,
    pub beta: f64,
}

impl SeParams {
    pub fn new(k: usize, delta: f64, nu: f64, beta: f64) -> Result<Self> {
        let p = SeParams { k, delta, nu, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidParam("k must be at least 2".into()));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::InvalidParam("delta must be positive".into()));
        }
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(Error::InvalidParam("nu must be positive".into()));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidParam("beta must be non-negative".into()));
        }
        Ok(())
    }
}

impl From<&ModelParams> for SeParams {
    fn from(p: &ModelParams) -> Self {
        SeParams { k: p.k, delta: p.delta(), nu: p.nu, beta: p.beta }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SEState {
    pub m: DMatrix<f64>,
    pub mtilde: DMatrix<f64>,
}

/// `beta (I+M)^-1 M`, symmetrized.
pub fn gaussian_overlap(m: &DMatrix<f64>, beta: f64) -> Result<DMatrix<f64>> {
    let k = m.nrows();
    let (inv, _) = spd_inverse(&(DMatrix::identity(k, k) + m))?;
    Ok(symmetrize(&(inv * m)) * beta)
}

impl SEState {
    /// Completes `M` (projected onto the PSD cone) with its weight-side partner.
    pub fn from_m(m: DMatrix<f64>, beta: f64) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Dimension("M must be square".into()));
        }
        let m = clip_psd(&m);
        let mtilde = clip_psd(&gaussian_overlap(&m, beta)?);
        Ok(SEState { m, mtilde })
    }

    pub fn zero(k: usize) -> Self {
        SEState { m: DMatrix::zeros(k, k), mtilde: DMatrix::zeros(k, k) }
    }

    /// `M* = (delta beta/k²) J`, `M̃* = rho0 J` with `rho0 = delta beta²/(k delta beta + k²)`.
    pub fn uninformative(p: &SeParams) -> Self {
        let kf = p.k as f64;
        let j = DMatrix::from_element(p.k, p.k, 1.0);
        let rho0 = p.delta * p.beta * p.beta / (kf * p.delta * p.beta + kf * kf);
        SEState { m: &j * (p.delta * p.beta / (kf * kf)), mtilde: j * rho0 }
    }
}

/// `beta² delta / (k² (k nu + 1)²)`: linear rate on the orthogonal subspace
/// at the uninformative fixed point.
pub fn se_contraction_factor(p: &SeParams) -> f64 {
    let kf = p.k as f64;
    p.beta * p.beta * p.delta / (kf * kf * (kf * p.nu + 1.0).powi(2))
}

pub const MIN_MC_SAMPLES: usize = 1000;

/// Fixed Monte Carlo sample set `(w_s, z_s)`.
#[derive(Debug, Clone)]
pub struct SeEngine {
    pub k: usize,
    pub nu: f64,
    w: DMatrix<f64>,
    z: DMatrix<f64>,
}

impl SeEngine {
    pub fn new(k: usize, nu: f64, samples: usize, seed: u64) -> Result<Self> {
        if samples < MIN_MC_SAMPLES {
            return Err(Error::InvalidParam(format!(
                "state evolution needs at least {MIN_MC_SAMPLES} Monte Carlo samples, got {samples}"
            )));
        }
        if k < 2 || !(nu > 0.0) {
            return Err(Error::InvalidParam("k must be >= 2 and nu > 0".into()));
        }
        let mut g = rng::stream(seed, rng::STREAM_SE);
        let mut w = DMatrix::zeros(samples, k);
        let mut buf = vec![0.0; k];
        for s in 0..samples {
            sample_dirichlet(&mut g, k, nu, &mut buf);
            for c in 0..k {
                w[(s, c)] = buf[c];
            }
        }
        let z = DMatrix::from_fn(samples, k, |_, _| g.sample::<f64, _>(StandardNormal));
        Ok(SeEngine { k, nu, w, z })
    }

    pub fn samples(&self) -> usize {
        self.w.nrows()
    }

    /// Rows `M̃ w_s + M̃^{1/2} z_s`.
    fn channel(&self, mtilde: &DMatrix<f64>) -> DMatrix<f64> {
        let root = sym_sqrt(mtilde);
        &self.w * mtilde + &self.z * root
    }

    /// `(E{ŵ ŵᵀ}, E φ̃)` for the weight channel with matrix `M̃`.
    fn weight_channel(&self, mtilde: &DMatrix<f64>, quad: &QuadratureSpec) -> Result<(DMatrix<f64>, f64)> {
        if mtilde.shape() != (self.k, self.k) {
            return Err(Error::Dimension(format!("expected {k}x{k} overlap", k = self.k)));
        }
        let rule = quadrature::rule(self.k, self.nu, quad)?;
        let tilt = DirichletTilt::new(&rule, mtilde, 1.0)?;
        let rows = dirichlet_rows(&tilt, &self.channel(mtilde))?;
        let n = self.samples() as f64;
        let phi = rows.log_partition.iter().sum::<f64>() / n;
        Ok((rows.outer_sum / n, phi))
    }

    /// Monte Carlo estimate of `E{F(M h + M^{1/2} z; M)^⊗2}` for the Gaussian
    /// prior; its exact value is `beta (I+M)^-1 M`.
    pub fn gaussian_channel_mc(&self, m: &DMatrix<f64>, beta: f64) -> Result<DMatrix<f64>> {
        let k = self.k;
        let (inv, _) = spd_inverse(&(DMatrix::identity(k, k) + m))?;
        let mut g = rng::stream(self.samples() as u64, rng::STREAM_MISC);
        let h = DMatrix::from_fn(self.samples(), k, |_, _| g.sample::<f64, _>(StandardNormal));
        let y = &h * m + &self.z * sym_sqrt(m);
        let f = y * inv;
        Ok(f.transpose() * &f * (beta / self.samples() as f64))
    }
}

fn check_se(state: &SEState, p: &SeParams, engine: &SeEngine) -> Result<()> {
    p.validate()?;
    if state.m.shape() != (p.k, p.k) || engine.k != p.k || engine.nu != p.nu {
        return Err(Error::Dimension("state, parameters and engine disagree on k or nu".into()));
    }
    Ok(())
}

/// One step `M_t -> M_{t+1}`; the result carries its own `M̃_{t+1}`.
pub fn se_step(state: &SEState, p: &SeParams, quad: &QuadratureSpec, engine: &SeEngine) -> Result<SEState> {
    check_se(state, p, engine)?;
    let mtilde = clip_psd(&gaussian_overlap(&clip_psd(&state.m), p.beta)?);
    let (second, _) = engine.weight_channel(&mtilde, quad)?;
    SEState::from_m(second * (p.delta * p.beta), p.beta)
}

/// The mmse form `beta delta {mmse(0) - mmse(M̃)}` of the weight update. It
/// equals [`se_step`] minus `(delta beta/k²) J`.
pub fn se_step_mmse(state: &SEState, p: &SeParams, quad: &QuadratureSpec, engine: &SeEngine) -> Result<SEState> {
    check_se(state, p, engine)?;
    let kf = p.k as f64;
    let mtilde = clip_psd(&gaussian_overlap(&clip_psd(&state.m), p.beta)?);
    let (second, _) = engine.weight_channel(&mtilde, quad)?;
    let m = (second - DMatrix::from_element(p.k, p.k, 1.0 / (kf * kf))) * (p.delta * p.beta);
    SEState::from_m(m, p.beta)
}

/// States `t = 0..=iters` starting from `M_0`.
pub fn se_trajectory(
    m0: &DMatrix<f64>,
    p: &SeParams,
    quad: &QuadratureSpec,
    engine: &SeEngine,
    iters: usize,
) -> Result<Vec<SEState>> {
    let mut out = Vec::with_capacity(iters + 1);
    out.push(SEState::from_m(m0.clone(), p.beta)?);
    for _ in 0..iters {
        let next = se_step(out.last().expect("non-empty"), p, quad, engine)?;
        out.push(next);
    }
    Ok(out)
}

/// `E φ(M h + M^{1/2} z; M) = -log det(I+M)/2 + Tr M/2` for the Gaussian prior.
pub fn gaussian_phi_mean(m: &DMatrix<f64>) -> Result<f64> {
    let k = m.nrows();
    let (_, logdet) = spd_inverse(&(DMatrix::identity(k, k) + m))?;
    Ok(-0.5 * logdet + 0.5 * m.trace())
}

fn rs_constant(p: &SeParams) -> f64 {
    p.beta * p.delta * (p.nu + 1.0) / (p.k as f64 * p.nu + 1.0)
}

/// `RS₀(M, M̃)`.
pub fn rs0(
    m: &DMatrix<f64>,
    mtilde: &DMatrix<f64>,
    p: &SeParams,
    quad: &QuadratureSpec,
    engine: &SeEngine,
) -> Result<f64> {
    p.validate()?;
    if !(p.beta > 0.0) {
        return Err(Error::InvalidParam("RS functional needs beta > 0".into()));
    }
    let (_, phi_w) = engine.weight_channel(mtilde, quad)?;
    Ok(rs_constant(p) + m.dot(mtilde) / (2.0 * p.beta) - gaussian_phi_mean(m)? - p.delta * phi_w)
}

/// `RS₀(M, beta (I+M)^-1 M)`. At stationary points of the recursion this is
/// the replica-symmetric free energy `RS(M)`; elsewhere it is a lower bound.
/// At `beta = 0` there is no coupling and the value is the constant 0.
pub fn rs_free_energy(m: &DMatrix<f64>, p: &SeParams, quad: &QuadratureSpec, engine: &SeEngine) -> Result<f64> {
    p.validate()?;
    if p.beta == 0.0 {
        return Ok(0.0);
    }
    let m = clip_psd(m);
    let mt = gaussian_overlap(&m, p.beta)?;
    rs0(&m, &mt, p, quad, engine)
}

/// Partial derivatives `(∂RS₀/∂M, ∂RS₀/∂M̃)`.
pub fn rs_gradients(
    m: &DMatrix<f64>,
    mtilde: &DMatrix<f64>,
    p: &SeParams,
    quad: &QuadratureSpec,
    engine: &SeEngine,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    p.validate()?;
    let s = 1.0 / (2.0 * p.beta);
    let dm = (mtilde - gaussian_overlap(m, p.beta)?) * s;
    let (second, _) = engine.weight_channel(mtilde, quad)?;
    let dmt = (m - second * (p.delta * p.beta)) * s;
    Ok((dm, dmt))
}

/// Natural cubic spline through `(x_i, y_i)`.
#[derive(Debug, Clone)]
struct Spline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl Spline {
    fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // tridiagonal system for the interior second derivatives
            let mut c = vec![0.0; n];
            let mut r = vec![0.0; n];
            for i in 1..n - 1 {
                let h0 = x[i] - x[i - 1];
                let h1 = x[i + 1] - x[i];
                let diag = 2.0 * (h0 + h1);
                let rhs = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
                let denom = diag - h0 * c[i - 1];
                c[i] = h1 / denom;
                r[i] = (rhs - h0 * r[i - 1]) / denom;
            }
            for i in (1..n - 1).rev() {
                m[i] = r[i] - c[i] * m[i + 1];
            }
        }
        Spline { x, y, m }
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

/// Orthonormal basis of the complement of `1_k` (Helmert vectors), k × (k−1).
fn helmert(k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, k - 1, |i, j| {
        let j1 = (j + 1) as f64;
        let s = (j1 * (j1 + 1.0)).sqrt();
        if i <= j {
            1.0 / s
        } else if i == j + 1 {
            -j1 / s
        } else {
            0.0
        }
    })
}

/// Outer integration rule for the symmetric channel: `w` on the simplex and
/// the `k−1` Gaussian coordinates of `P⊥ z`.
#[derive(Debug, Clone)]
pub struct ChannelRule {
    w: SimplexRule,
    w_weights: Vec<f64>,
    z: Vec<Vec<f64>>,
    z_weights: Vec<f64>,
}

impl ChannelRule {
    pub fn new(k: usize, nu: f64, simplex_nodes: usize, hermite_nodes: usize) -> Result<Self> {
        let w = SimplexRule::coarse_grid(k, nu, simplex_nodes)?;
        let w_weights = w.log_weights.iter().map(|l| l.exp()).collect();
        let (gx, gw) = gauss_hermite(hermite_nodes);
        let basis = helmert(k);
        let dims = k - 1;
        let total = hermite_nodes.pow(dims as u32);
        let mut z = Vec::with_capacity(total);
        let mut z_weights = Vec::with_capacity(total);
        let mut idx = vec![0usize; dims];
        for _ in 0..total {
            let mut v = vec![0.0; k];
            let mut wt = 1.0;
            for (j, &i) in idx.iter().enumerate() {
                wt *= gw[i];
                for r in 0..k {
                    v[r] += basis[(r, j)] * gx[i];
                }
            }
            z.push(v);
            z_weights.push(wt);
            for j in (0..dims).rev() {
                idx[j] += 1;
                if idx[j] < hermite_nodes {
                    break;
                }
                idx[j] = 0;
            }
        }
        Ok(ChannelRule { w, w_weights, z, z_weights })
    }

    /// 64 × 32 nodes for k = 2, 16² × 6² for k = 3.
    pub fn default_for(k: usize, nu: f64) -> Result<Self> {
        match k {
            2 => Self::new(2, nu, 64, 32),
            3 => Self::new(3, nu, 16, 6),
            _ => Err(Error::InvalidParam("the symmetric channel is tabulated for k <= 3 only".into())),
        }
    }
}

/// `(c1(a), Φ(a))` for the scalar channel `y = a w + sqrt(a) P⊥ z` with
/// quadratic tilt `a I`: `c1 = (E‖ŵ‖² − 1/k)/(k−1)` is the identity
/// coefficient of `E{ŵŵᵀ}` and `Φ = E log ∫ exp(<y,w'> − a‖w'‖²/2) Dir(dw')`.
pub fn channel_point(a: f64, inner: &SimplexRule, outer: &ChannelRule) -> Result<(f64, f64)> {
    use rayon::prelude::*;
    if !(a >= 0.0) || !a.is_finite() {
        return Err(Error::InvalidParam(format!("channel strength must be >= 0, got {a}")));
    }
    if a == 0.0 {
        return Ok((0.0, 0.0));
    }
    let k = inner.k;
    let tilt = DirichletTilt::new(inner, &(DMatrix::identity(k, k) * a), 1.0)?;
    let sa = a.sqrt();
    let parts: Vec<(f64, f64)> = (0..outer.w.len())
        .into_par_iter()
        .map(|j| {
            let w = outer.w.point(j);
            let mut y = vec![0.0; k];
            let (mut s2, mut sl) = (0.0, 0.0);
            for (z, zw) in outer.z.iter().zip(&outer.z_weights) {
                for c in 0..k {
                    y[c] = a * w[c] + sa * z[c];
                }
                let raw = tilt.raw(&y, false);
                s2 += zw * raw.mean.iter().map(|v| v * v).sum::<f64>();
                sl += zw * raw.log_partition;
            }
            (outer.w_weights[j] * s2, outer.w_weights[j] * sl)
        })
        .collect();
    let (s2, sl) = parts.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let kf = k as f64;
    Ok(((s2 - 1.0 / kf) / (kf - 1.0), sl))
}

/// A symmetric fixed point of state evolution, `M = alpha I + gamma J`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SymmetricFixedPoint {
    pub a: f64,
    pub alpha: f64,
    pub gamma: f64,
    /// `RS(M) − RS(M*)`.
    pub delta_rs: f64,
}

/// Tabulated scalar channel for the permutation-symmetric subspace.
#[derive(Debug, Clone)]
pub struct SymmetricChannel {
    pub k: usize,
    pub nu: f64,
    pub a_max: f64,
    c1: Spline,
    phi: Spline,
}

impl SymmetricChannel {
    /// Tabulates on `a_j = a_max (j/size)²`.
    pub fn new(k: usize, nu: f64, quad: &QuadratureSpec, a_max: f64, size: usize) -> Result<Self> {
        if !(a_max > 0.0) || size < 4 {
            return Err(Error::InvalidParam("channel table needs a_max > 0 and at least 4 nodes".into()));
        }
        let inner = quadrature::rule(k, nu, quad)?;
        let outer = ChannelRule::default_for(k, nu)?;
        let xs: Vec<f64> = (0..=size).map(|j| a_max * (j as f64 / size as f64).powi(2)).collect();
        let mut c1 = Vec::with_capacity(xs.len());
        let mut phi = Vec::with_capacity(xs.len());
        for &a in &xs {
            let (c, f) = channel_point(a, &inner, &outer)?;
            c1.push(c);
            phi.push(f);
        }
        Ok(SymmetricChannel { k, nu, a_max, c1: Spline::new(xs.clone(), c1), phi: Spline::new(xs, phi) })
    }

    pub fn c1(&self, a: f64) -> f64 {
        self.c1.eval(a)
    }

    pub fn phi(&self, a: f64) -> f64 {
        self.phi.eval(a)
    }

    /// Small-`a` slope of `c1`: the squared identity coefficient of the prior
    /// covariance, `1/(k²(k nu+1)²)`.
    pub fn c1_slope_at_zero(&self) -> f64 {
        let kf = self.k as f64;
        1.0 / (kf * kf * (kf * self.nu + 1.0).powi(2))
    }

    /// `RS` at `M = alpha P⊥ + mu P∥` paired with `M̃ = a P⊥ + b P∥`.
    pub fn rs_symmetric(&self, alpha: f64, mu: f64, p: &SeParams) -> f64 {
        let kf = self.k as f64;
        let beta = p.beta;
        let a = beta * alpha / (1.0 + alpha);
        let b = beta * mu / (1.0 + mu);
        rs_constant(p) + ((kf - 1.0) * alpha * a + mu * b) / (2.0 * beta)
            + 0.5 * ((kf - 1.0) * (1.0 + alpha).ln() + (1.0 + mu).ln())
            - 0.5 * ((kf - 1.0) * alpha + mu)
            - p.delta * (self.phi(a) + (b - a) / (2.0 * kf))
    }

    /// Fixed-point residual in `a`: `beta s/(1+s) − a` with `s = delta beta c1(a)`.
    fn residual(&self, a: f64, p: &SeParams) -> f64 {
        let s = p.delta * p.beta * self.c1(a);
        p.beta * s / (1.0 + s) - a
    }

    /// All fixed points with `alpha > 0` at `p.beta`, with their free-energy
    /// gap to the uninformative point.
    pub fn fixed_points(&self, p: &SeParams) -> Result<Vec<SymmetricFixedPoint>> {
        p.validate()?;
        if p.k != self.k || p.nu != self.nu {
            return Err(Error::InvalidParam("channel table built for different k or nu".into()));
        }
        if !(p.beta > 0.0) {
            return Ok(Vec::new());
        }
        let top = p.beta * (1.0 - 1e-9);
        if top > self.a_max {
            return Err(Error::InvalidParam(format!("beta {} exceeds the channel table range {}", p.beta, self.a_max)));
        }
        let kf = self.k as f64;
        let mut nodes: Vec<f64> = self.c1.x.iter().cloned().filter(|&a| a > 0.0 && a < top).collect();
        nodes.push(top);
        let slope = p.delta * p.beta * p.beta * self.c1_slope_at_zero() - 1.0;
        let mut prev = (0.0, slope);
        let mut roots = Vec::new();
        for &a in &nodes {
            let r = self.residual(a, p);
            if (prev.1 > 0.0) != (r > 0.0) {
                let (mut lo, mut hi) = (prev.0, a);
                let lo_pos = prev.1 > 0.0;
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if (self.residual(mid, p) > 0.0) == lo_pos {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                roots.push(0.5 * (lo + hi));
            }
            prev = (a, r);
        }
        let mu = p.delta * p.beta / kf;
        let rs_star = self.rs_symmetric(0.0, mu, p);
        Ok(roots
            .into_iter()
            .filter(|&a| a > 1e-12)
            .map(|a| {
                let alpha = a / (p.beta - a);
                let c1 = self.c1(a);
                let gamma = p.delta * p.beta * (1.0 - kf * c1) / (kf * kf);
                let delta_rs = self.rs_symmetric(alpha, alpha + kf * gamma, p) - rs_star;
                SymmetricFixedPoint { a, alpha, gamma, delta_rs }
            })
            .collect())
    }

    /// Whether some informative fixed point has lower free energy than `M*`.
    pub fn informative_wins(&self, p: &SeParams) -> Result<bool> {
        Ok(self.fixed_points(p)?.iter().any(|f| f.delta_rs < 0.0))
    }
}

/// `inf {beta : an informative state has lower RS than M*}` for `k ∈ {2,3}`.
/// Scans `beta = beta_spect·j/20`, `j = 1..40`, then bisects to width 0.01.
/// If no crossing is found below `2 beta_spect`, returns `beta_spect` and logs
/// a note.
pub fn beta_bayes(k: usize, delta: f64, nu: f64, quad: &QuadratureSpec) -> Result<f64> {
    SeParams::new(k, delta, nu, 0.0)?;
    let spect = beta_spect(k, delta, nu);
    let size = if k == 2 { 240 } else { 96 };
    let channel = SymmetricChannel::new(k, nu, quad, 2.0 * spect, size)?;
    let wins = |beta: f64| channel.informative_wins(&SeParams { k, delta, nu, beta });
    let mut lo = 0.0;
    for j in 1..=40 {
        let beta = spect * j as f64 / 20.0;
        if wins(beta)? {
            let mut hi = beta;
            while hi - lo > 0.01 {
                let mid = 0.5 * (lo + hi);
                if wins(mid)? {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(0.5 * (lo + hi));
        }
        lo = beta;
    }
    log::warn!("no lower crossing found for beta_Bayes (k={k}, delta={delta}, nu={nu}); reporting beta_spect");
    Ok(spect)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub k: usize,
    pub delta: f64,
    pub nu: f64,
    pub beta_spect: f64,
    pub beta_inst: f64,
    pub beta_bayes: f64,
}

pub fn thresholds(k: usize, delta: f64, nu: f64, quad: &QuadratureSpec) -> Result<Thresholds> {
    let t = Thresholds {
        k,
        delta,
        nu,
        beta_spect: beta_spect(k, delta, nu),
        beta_inst: crate::meanfield::beta_inst(k, delta, nu, quad)?,
        beta_bayes: beta_bayes(k, delta, nu, quad)?,
    };
    if t.beta_inst > t.beta_bayes + 1e-2 || t.beta_bayes > t.beta_spect + 1e-2 {
        log::warn!("threshold ordering violated: {t:?}");
    }
    Ok(t)
}
