//! TAP free energy, approximate message passing (plain and damped), the
//! symmetric AMP fixed point and the spectral checks around it.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{convergence_delta, v_stat};
use crate::error::{Error, Result};
use crate::linalg::{lanczos_extremal, permute_columns, spd_inverse, sym_sqrt, symmetrize};
use crate::meanfield::perturbed_start;
use crate::model::ModelParams;
use crate::priors::{dirichlet_rows, DirichletTilt, GaussTilt, RowMoments};
use crate::quadrature::{self, QuadratureSpec};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct AmpState {
    /// d×k topic-side parameters `m^t`.
    pub m: DMatrix<f64>,
    /// n×k weight-side parameters `m̃^{t−1}`, the input of the next memory term.
    pub mtilde: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub qtilde: DMatrix<f64>,
    /// `m̃^{t−2}`.
    pub mtilde_prev: DMatrix<f64>,
    /// Topic-side Onsager matrix of the last step.
    pub omega: DMatrix<f64>,
    /// Weight-side Onsager matrix of the last step.
    pub omega_tilde: DMatrix<f64>,
    pub kh: DMatrix<f64>,
    pub kw: DMatrix<f64>,
    /// Damped history `Σ γ(1−γ)^{t−s} F(m^s;Q^s)` of the topic-side
    /// estimates, d×k.
    pub f_hist: DMatrix<f64>,
    /// Damped history of `F̃(m̃^s;Q̃^s)` up to the last step, n×k.
    pub ft_hist: DMatrix<f64>,
    /// `F(m;Q)/sqrt(beta)`.
    pub r: DMatrix<f64>,
    /// `F̃(m̃;Q̃)/sqrt(beta)`, consistent with `mtilde`, `qtilde`.
    pub rtilde: DMatrix<f64>,
    /// Whether the next step subtracts a memory term. False only for a
    /// state built directly from topic-side parameters.
    pub memory: bool,
}

impl AmpState {
    pub fn permute_topics(&self, perm: &[usize]) -> Self {
        let pq = |a: &DMatrix<f64>| DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(perm[i], perm[j])]);
        AmpState {
            m: permute_columns(&self.m, perm),
            mtilde: permute_columns(&self.mtilde, perm),
            q: pq(&self.q),
            qtilde: pq(&self.qtilde),
            mtilde_prev: permute_columns(&self.mtilde_prev, perm),
            omega: pq(&self.omega),
            omega_tilde: pq(&self.omega_tilde),
            kh: pq(&self.kh),
            kw: pq(&self.kw),
            f_hist: permute_columns(&self.f_hist, perm),
            ft_hist: permute_columns(&self.ft_hist, perm),
            r: permute_columns(&self.r, perm),
            rtilde: permute_columns(&self.rtilde, perm),
            memory: self.memory,
        }
    }
}

/// Memory term of the damped iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Onsager {
    /// `γ² F̃(m̃^{t−1}) K_H^t` and `γ² F(m^t) K_W^t` with geometric sums of
    /// Jacobians.
    Accumulated,
    /// `γ Ḡ^{t−1} B_t` and `γ Ḡ_H^t C_t`, where `Ḡ`, `Ḡ_H` are the damped
    /// histories of `F̃` and `F`; the exact correction of the unrolled
    /// damped recursion. Both forms agree at `γ = 1` and at fixed points.
    #[default]
    History,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmpConfig {
    pub gamma: f64,
    #[serde(default)]
    pub onsager: Onsager,
    pub max_iters: usize,
    pub min_iters: usize,
    pub conv_threshold: f64,
    pub init_epsilon: f64,
    pub quad: QuadratureSpec,
    pub seed: u64,
    /// Evaluate the TAP free energy along the trajectory.
    pub track_free_energy: bool,
}

impl AmpConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        AmpConfig {
            gamma: 0.8,
            onsager: Onsager::History,
            max_iters: 300,
            min_iters: 40,
            conv_threshold: 0.005,
            init_epsilon: 0.01,
            quad: QuadratureSpec::default_for(k),
            seed,
            track_free_energy: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidParam(format!("damping gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.conv_threshold > 0.0) {
            return Err(Error::InvalidParam("conv_threshold must be positive".into()));
        }
        if self.min_iters > self.max_iters {
            return Err(Error::InvalidParam("min_iters exceeds max_iters".into()));
        }
        if !(self.init_epsilon >= 0.0 && self.init_epsilon <= 1.0) {
            return Err(Error::InvalidParam("init_epsilon must lie in [0, 1]".into()));
        }
        self.quad.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AmpTrace {
    pub iter: usize,
    pub tap_free_energy: Option<f64>,
    #[serde(rename = "V_W")]
    pub v_w: f64,
    #[serde(rename = "V_H")]
    pub v_h: f64,
    pub delta_t: f64,
    #[serde(rename = "tr_Q")]
    pub tr_q: f64,
    #[serde(rename = "tr_Qtilde")]
    pub tr_qtilde: f64,
}

#[derive(Debug, Clone)]
pub struct AmpRun {
    pub state: AmpState,
    pub iterations: usize,
    pub converged: bool,
    pub trajectory: Vec<AmpTrace>,
}

fn check_state(state: &AmpState, params: &ModelParams) -> Result<()> {
    let (k, d, n) = (params.k, params.d, params.n);
    let ok = state.m.shape() == (d, k)
        && state.mtilde.shape() == (n, k)
        && state.rtilde.shape() == (n, k)
        && state.q.shape() == (k, k)
        && state.kh.shape() == (k, k)
        && state.kw.shape() == (k, k);
    if ok {
        Ok(())
    } else {
        Err(Error::Dimension("AMP state does not match model dimensions".into()))
    }
}

/// Weight-side moments at `(m̃, Q̃)` and the Onsager matrix
/// `Ω̃ = (sqrt(beta)/d) Σ_a Cov_a(w)`.
fn weight_side(
    mtilde: &DMatrix<f64>,
    qtilde: &DMatrix<f64>,
    params: &ModelParams,
    quad: &QuadratureSpec,
) -> Result<(RowMoments, DMatrix<f64>)> {
    let rule = quadrature::rule(params.k, params.nu, quad)?;
    let tilt = DirichletTilt::new(&rule, qtilde, params.beta)?;
    let rows = dirichlet_rows(&tilt, mtilde)?;
    let omega_tilde = symmetrize(&(&rows.second_sum - &rows.outer_sum)) * (params.beta.sqrt() / params.d as f64);
    Ok((rows, omega_tilde))
}

struct Sweep {
    mtilde: DMatrix<f64>,
    qtilde: DMatrix<f64>,
    m: DMatrix<f64>,
    q: DMatrix<f64>,
    omega: DMatrix<f64>,
    omega_tilde: DMatrix<f64>,
    rtilde: DMatrix<f64>,
    f_hist: DMatrix<f64>,
    ft_hist: DMatrix<f64>,
}

struct Damping<'a> {
    gamma: f64,
    onsager: Onsager,
    kh: &'a mut DMatrix<f64>,
    kw: &'a mut DMatrix<f64>,
}

/// Shared body of the plain and damped steps. `gamma = None` is the plain
/// iteration.
fn sweep(
    state: &AmpState,
    x: &DMatrix<f64>,
    params: &ModelParams,
    quad: &QuadratureSpec,
    damping: Option<Damping<'_>>,
) -> Result<Sweep> {
    let beta = params.beta;
    let sb = beta.sqrt();
    let d = params.d as f64;
    let gt = GaussTilt::new(&state.q, beta)?;
    let f = gt.mean_rows(&state.m);
    let omega = &gt.inv * sb;
    let memory = if state.memory { Some(&state.rtilde * sb) } else { None };
    let qtilde = symmetrize(&(f.transpose() * &f)) / d;
    match damping {
        None => {
            let mut mtilde = x * &f;
            if let Some(mem) = &memory {
                mtilde -= mem * &omega;
            }
            let (rows, omega_tilde) = weight_side(&mtilde, &qtilde, params, quad)?;
            let ft = &rows.mean * sb;
            let m = x.transpose() * &ft - &f * &omega_tilde;
            let q = symmetrize(&rows.outer_sum) * (beta / d);
            Ok(Sweep { mtilde, qtilde, m, q, omega, omega_tilde, f_hist: f, ft_hist: ft, rtilde: rows.mean })
        }
        Some(Damping { gamma: g, onsager, kh, kw }) => {
            *kh = &*kh * (1.0 - g) + &omega;
            let mut mtilde = &state.mtilde * (1.0 - g) + x * &f * g;
            if memory.is_some() {
                mtilde -= match onsager {
                    Onsager::Accumulated => &state.rtilde * &*kh * (sb * g * g),
                    Onsager::History => &state.ft_hist * &omega * g,
                };
            }
            let (rows, omega_tilde) = weight_side(&mtilde, &qtilde, params, quad)?;
            *kw = &*kw * (1.0 - g) + &omega_tilde;
            let ft = &rows.mean * sb;
            let f_hist = &state.f_hist * (1.0 - g) + &f * g;
            let correction = match onsager {
                Onsager::Accumulated => &f * &*kw * (g * g),
                Onsager::History => &f_hist * &omega_tilde * g,
            };
            let m = &state.m * (1.0 - g) + x.transpose() * &ft * g - correction;
            let q = symmetrize(&rows.outer_sum) * (beta / d);
            let ft_hist = &state.ft_hist * (1.0 - g) + &ft * g;
            Ok(Sweep { mtilde, qtilde, m, q, omega, omega_tilde, f_hist, ft_hist, rtilde: rows.mean })
        }
    }
}

fn finish(state: &AmpState, s: Sweep, kh: DMatrix<f64>, kw: DMatrix<f64>) -> Result<AmpState> {
    let r = GaussTilt::new(&s.q, 1.0)?.mean_rows(&s.m);
    Ok(AmpState {
        m: s.m,
        mtilde: s.mtilde,
        q: s.q,
        qtilde: s.qtilde,
        mtilde_prev: state.mtilde.clone(),
        omega: s.omega,
        omega_tilde: s.omega_tilde,
        kh,
        kw,
        f_hist: s.f_hist,
        ft_hist: s.ft_hist,
        r,
        rtilde: s.rtilde,
        memory: true,
    })
}

/// One AMP iteration:
/// `m̃^t = X F(m^t;Q^t) − F̃(m̃^{t−1};Q̃^{t−1}) Ω_t`,
/// `m^{t+1} = Xᵀ F̃(m̃^t;Q̃^t) − F(m^t;Q^t) Ω̃_t`,
/// with `Q̃^t = (1/d) Σ_i F(m_i^t)^⊗2` and `Q^{t+1} = (1/d) Σ_a F̃(m̃_a^t)^⊗2`.
pub fn amp_step(state: &AmpState, x: &DMatrix<f64>, params: &ModelParams, quad: &QuadratureSpec) -> Result<AmpState> {
    params.check_x(x)?;
    check_state(state, params)?;
    let s = sweep(state, x, params, quad, None)?;
    let (kh, kw) = (s.omega.clone(), s.omega_tilde.clone());
    finish(state, s, kh, kw)
}

/// Damped iteration with geometric Jacobian accumulators
/// `K_H ← (1−γ) K_H + B_t`, `K_W ← (1−γ) K_W + C_t`; `B_t = Ω_t` and
/// `C_t = Ω̃_t` are the averaged Jacobians of `F` and `F̃`.
pub fn damped_amp_step(
    state: &AmpState,
    x: &DMatrix<f64>,
    params: &ModelParams,
    cfg: &AmpConfig,
) -> Result<AmpState> {
    params.check_x(x)?;
    check_state(state, params)?;
    if !(cfg.gamma > 0.0 && cfg.gamma <= 1.0) {
        return Err(Error::InvalidParam(format!("damping gamma must lie in (0, 1], got {}", cfg.gamma)));
    }
    let mut kh = state.kh.clone();
    let mut kw = state.kw.clone();
    let damping = Damping { gamma: cfg.gamma, onsager: cfg.onsager, kh: &mut kh, kw: &mut kw };
    let s = sweep(state, x, params, &cfg.quad, Some(damping))?;
    finish(state, s, kh, kw)
}

/// The permutation-symmetric fixed point of AMP:
/// `Q* = q0 J`, `q0 = beta delta/k²`, `Q̃* = q̃0 J`,
/// `q̃0 = beta² ‖Xᵀ1‖²/(d k² (1+k q0)²)`, `r* = sqrt(beta)/(k(1+k q0)) Xᵀ1 ⊗ 1`,
/// `r̃* = 1/k`. The accumulators hold the single-step Jacobians.
pub fn tap_uninformative(params: &ModelParams, x: &DMatrix<f64>, quad: &QuadratureSpec) -> Result<AmpState> {
    params.check_x(x)?;
    let (k, d, n) = (params.k, params.d, params.n);
    let kf = k as f64;
    let beta = params.beta;
    let sb = beta.sqrt();
    let delta = params.delta();
    let q0 = beta * delta / (kf * kf);
    let s = x.transpose() * DVector::from_element(n, 1.0);
    let xs = x * &s;
    let jk = DMatrix::from_element(k, k, 1.0);
    let qt0 = beta * beta * s.norm_squared() / (d as f64 * kf * kf * (1.0 + kf * q0).powi(2));
    let q = &jk * q0;
    let qtilde = &jk * qt0;
    let r = DMatrix::from_fn(d, k, |i, _| sb / (kf * (1.0 + kf * q0)) * s[i]);
    let m = &r * (DMatrix::identity(k, k) + &q);
    let mtilde = DMatrix::from_fn(n, k, |a, _| beta / (kf + delta * beta) * (xs[a] - 1.0));
    let (rows, omega_tilde) = weight_side(&mtilde, &qtilde, params, quad)?;
    let omega = GaussTilt::new(&q, beta)?.inv * sb;
    Ok(AmpState {
        m,
        mtilde: mtilde.clone(),
        q,
        qtilde,
        mtilde_prev: mtilde,
        kh: omega.clone(),
        kw: omega_tilde.clone(),
        f_hist: &r * sb,
        ft_hist: &rows.mean * sb,
        omega,
        omega_tilde,
        r,
        rtilde: rows.mean,
        memory: true,
    })
}

/// A state with `m^0 = H M_0 + G M_0^{1/2}`, `Q^0 = M_0` (G standard
/// Gaussian), and no memory term in the first step.
pub fn amp_from_overlap(h: &DMatrix<f64>, m0: &DMatrix<f64>, params: &ModelParams, seed: u64) -> Result<AmpState> {
    let (k, d, n) = (params.k, params.d, params.n);
    if h.shape() != (d, k) || m0.shape() != (k, k) {
        return Err(Error::Dimension("H must be d×k and M0 k×k".into()));
    }
    let mut g = rng::stream(seed, rng::STREAM_INIT);
    let noise = DMatrix::from_fn(d, k, |_, _| g.sample::<f64, _>(StandardNormal));
    let m = h * m0 + noise * sym_sqrt(m0);
    let q = symmetrize(m0);
    let r = GaussTilt::new(&q, 1.0)?.mean_rows(&m);
    let zk = DMatrix::zeros(k, k);
    Ok(AmpState {
        m,
        mtilde: DMatrix::zeros(n, k),
        q,
        qtilde: zk.clone(),
        mtilde_prev: DMatrix::zeros(n, k),
        omega: zk.clone(),
        omega_tilde: zk.clone(),
        kh: zk.clone(),
        kw: zk,
        f_hist: DMatrix::zeros(d, k),
        ft_hist: DMatrix::zeros(n, k),
        r,
        rtilde: DMatrix::from_element(n, k, 1.0 / k as f64),
        memory: false,
    })
}

/// Damped AMP from a perturbation of the symmetric fixed point, stopped by
/// the same criterion as naive mean field.
pub fn run_amp(x: &DMatrix<f64>, params: &ModelParams, cfg: &AmpConfig) -> Result<AmpRun> {
    cfg.validate()?;
    params.check_x(x)?;
    let quad = &cfg.quad;
    let mut state = tap_uninformative(params, x, quad)?;
    state.m = perturbed_start(&state.r, &state.q, cfg.init_epsilon, cfg.seed);
    state.r = GaussTilt::new(&state.q, 1.0)?.mean_rows(&state.m);
    state.kh = &state.omega / cfg.gamma;
    state.kw = &state.omega_tilde / cfg.gamma;
    let mut trajectory = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;
    let mut iterations = 0;
    for t in 1..=cfg.max_iters {
        let next = damped_amp_step(&state, x, params, cfg)?;
        let delta_t = convergence_delta(&state.rtilde, &next.rtilde)?;
        state = next;
        iterations = t;
        let tap_free_energy = if cfg.track_free_energy {
            Some(tap_free_energy(&state.r, &state.rtilde, x, params, quad)?)
        } else {
            None
        };
        trajectory.push(AmpTrace {
            iter: t,
            tap_free_energy,
            v_w: v_stat(&state.rtilde),
            v_h: v_stat(&state.r),
            delta_t,
            tr_q: state.q.trace(),
            tr_qtilde: state.qtilde.trace(),
        });
        if t >= cfg.min_iters && delta_t < cfg.conv_threshold {
            converged = true;
            break;
        }
    }
    Ok(AmpRun { state, iterations, converged, trajectory })
}

const NEWTON_ITERS: usize = 100;
const NEWTON_TOL: f64 = 1e-8;

/// Solves `E[w](m̃) = target` on the hyperplane `<1, m̃> = 0` by damped
/// Newton steps from the symmetric tilt. Returns `(m̃, log Z, Cov)`.
fn invert_mean(tilt: &DirichletTilt<'_>, target: &[f64], row: usize) -> Result<(Vec<f64>, f64, DMatrix<f64>)> {
    let k = tilt.k();
    if target.iter().any(|&v| !(v > 0.0)) || (target.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Inversion { row, reason: "target outside the open simplex".into() });
    }
    let objective = |y: &[f64]| tilt.log_partition(y) - y.iter().zip(target).map(|(a, b)| a * b).sum::<f64>();
    let mut y = vec![0.0; k];
    let mut raw = tilt.raw(&y, true);
    let mut val = raw.log_partition;
    for _ in 0..NEWTON_ITERS {
        let resid: Vec<f64> = target.iter().zip(&raw.mean).map(|(t, m)| t - m).collect();
        let err = resid.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let cov = DMatrix::from_fn(k, k, |a, b| raw.second[a * k + b] - raw.mean[a] * raw.mean[b]);
        if err < 1e-12 {
            return Ok((y, raw.log_partition, cov));
        }
        let sys = &cov + DMatrix::from_element(k, k, 1.0 / k as f64);
        let step = sys
            .lu()
            .solve(&DVector::from_vec(resid))
            .ok_or_else(|| Error::Inversion { row, reason: "singular covariance".into() })?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = y.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let cv = objective(&cand);
            if cv < val {
                y = cand;
                val = cv;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        raw = tilt.raw(&y, true);
        if !accepted {
            break;
        }
    }
    let err = target.iter().zip(&raw.mean).fold(0.0f64, |a, (t, m)| a.max((t - m).abs()));
    if err < NEWTON_TOL {
        let cov = DMatrix::from_fn(k, k, |a, b| raw.second[a * k + b] - raw.mean[a] * raw.mean[b]);
        Ok((y, raw.log_partition, cov))
    } else {
        Err(Error::Inversion { row, reason: format!("Newton residual {err:e}") })
    }
}

struct TapParts {
    value: f64,
    /// Gaussian-side natural parameters `(I+Q) r`.
    m: DMatrix<f64>,
    /// Inverted weight-side tilts.
    mtilde: DMatrix<f64>,
    cov_sum: DMatrix<f64>,
    q_inv: DMatrix<f64>,
}

fn tap_parts(
    r: &DMatrix<f64>,
    rtilde: &DMatrix<f64>,
    x: &DMatrix<f64>,
    params: &ModelParams,
    quad: &QuadratureSpec,
) -> Result<TapParts> {
    params.check_x(x)?;
    let (k, d, n) = (params.k, params.d, params.n);
    if r.shape() != (d, k) || rtilde.shape() != (n, k) {
        return Err(Error::Dimension("r must be d×k and rtilde n×k".into()));
    }
    let beta = params.beta;
    let df = d as f64;
    let q = symmetrize(&(rtilde.transpose() * rtilde)) * (beta / df);
    let qt = symmetrize(&(r.transpose() * r)) * (beta / df);
    let ipq = DMatrix::identity(k, k) + &q;
    let (q_inv, logdet) = spd_inverse(&ipq)?;
    let m = r * &ipq;
    let psi_gauss = 0.5 * r.dot(&m) + 0.5 * df * logdet;
    let rule = quadrature::rule(k, params.nu, quad)?;
    let tilt = DirichletTilt::new(&rule, &qt, 1.0)?;
    let mut mtilde = DMatrix::zeros(n, k);
    let mut cov_sum = DMatrix::zeros(k, k);
    let mut psi_dir = 0.0;
    let mut target = vec![0.0; k];
    for a in 0..n {
        for c in 0..k {
            target[c] = rtilde[(a, c)];
        }
        let (y, logz, cov) = invert_mean(&tilt, &target, a)?;
        psi_dir += y.iter().zip(&target).map(|(u, v)| u * v).sum::<f64>() - logz;
        for c in 0..k {
            mtilde[(a, c)] = y[c];
        }
        cov_sum += cov;
    }
    let coupling = -beta.sqrt() * (x * r).dot(rtilde);
    let cross = rtilde * r.transpose();
    let reaction = -beta / (2.0 * df) * cross.norm_squared();
    Ok(TapParts { value: psi_gauss + psi_dir + coupling + reaction, m, mtilde, cov_sum, q_inv })
}

/// TAP free energy of the estimate pair `(r, r̃)`; rows of `r̃` must lie in
/// the open simplex.
pub fn tap_free_energy(
    r: &DMatrix<f64>,
    rtilde: &DMatrix<f64>,
    x: &DMatrix<f64>,
    params: &ModelParams,
    quad: &QuadratureSpec,
) -> Result<f64> {
    Ok(tap_parts(r, rtilde, x, params, quad)?.value)
}

/// `(∂F/∂r, ∂F/∂r̃)`: `m_i − sqrt(beta)(Xᵀr̃)_i + sqrt(beta) Ω̃ r_i` and
/// `m̃_a − sqrt(beta)(X r)_a + sqrt(beta) Ω r̃_a`. The weight-side gradient is
/// defined up to multiples of `1_k` in each row.
pub fn tap_gradient(
    r: &DMatrix<f64>,
    rtilde: &DMatrix<f64>,
    x: &DMatrix<f64>,
    params: &ModelParams,
    quad: &QuadratureSpec,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let parts = tap_parts(r, rtilde, x, params, quad)?;
    let beta = params.beta;
    let sb = beta.sqrt();
    let d = params.d as f64;
    let gr = &parts.m - x.transpose() * rtilde * sb + r * &parts.cov_sum * (beta / d);
    let gt = &parts.mtilde - x * r * sb + rtilde * &parts.q_inv * beta;
    Ok((gr, gt))
}

/// The block matrix of the TAP quadratic form on the orthogonal fluctuations
/// around the symmetric point:
/// `[(1 + delta beta/(k(k nu+1))) I_d, −sqrt(beta) Xᵀ(I_n − c J_n); ·, (beta + k(k nu+1)) I_n − beta c J_n]`
/// with `c = beta/(d(k + delta beta))`.
pub fn tap_hessian(params: &ModelParams, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    params.check_x(x)?;
    let (k, d, n) = (params.k as f64, params.d, params.n);
    let beta = params.beta;
    let delta = params.delta();
    let c = beta / (d as f64 * (k + delta * beta));
    let s = x.transpose() * DVector::from_element(n, 1.0);
    let mut h = DMatrix::zeros(d + n, d + n);
    let top = 1.0 + delta * beta / (k * (k * params.nu + 1.0));
    let bottom = beta + k * (k * params.nu + 1.0);
    for i in 0..d {
        h[(i, i)] = top;
    }
    for a in 0..n {
        for b in 0..n {
            h[(d + a, d + b)] = -beta * c;
        }
        h[(d + a, d + a)] += bottom;
    }
    let sb = beta.sqrt();
    for i in 0..d {
        for a in 0..n {
            let v = -sb * (x[(a, i)] - c * s[i]);
            h[(i, d + a)] = v;
            h[(d + a, i)] = v;
        }
    }
    Ok(h)
}

const DENSE_LIMIT: usize = 2000;

/// Smallest eigenvalue of [`tap_hessian`]: dense below `d + n = 2000`,
/// Lanczos above.
pub fn tap_hessian_min_eig(params: &ModelParams, x: &DMatrix<f64>) -> Result<f64> {
    let h = tap_hessian(params, x)?;
    let size = h.nrows();
    if size <= DENSE_LIMIT {
        return Ok(SymmetricEigen::new(h).eigenvalues.min());
    }
    Ok(lanczos_extremal(size, 300.min(size), 17, |v| &h * v).min)
}

/// Limit of the top singular value of `γ u vᵀ + α∥ P_u Z + α⊥ P_u^⊥ Z` with
/// `Z` of aspect ratio `delta` and `N(0, 1/d)` entries.
pub fn bbp_singular_value(gamma: f64, alpha_par: f64, alpha_perp: f64, delta: f64) -> Result<f64> {
    if !(alpha_perp > 0.0) || !(delta > 0.0) {
        return Err(Error::InvalidParam("bbp needs alpha_perp > 0 and delta > 0".into()));
    }
    let g2 = gamma * gamma;
    let ap2 = alpha_par * alpha_par;
    let aq2 = alpha_perp * alpha_perp;
    let crit = (1.0 + delta.sqrt()) * aq2 - ap2;
    let l2 = if g2 > crit {
        let s = g2 + ap2;
        s * (s - aq2 * (1.0 - delta)) / (s - aq2)
    } else {
        aq2 * (1.0 + delta.sqrt()).powi(2)
    };
    Ok(l2.sqrt())
}
