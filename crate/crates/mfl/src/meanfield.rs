//! Naive mean field: free energy, alternating minimization, the
//! permutation-symmetric fixed point and its instability criterion.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{convergence_delta, v_stat};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::priors::{dirichlet_rows, e_func, DirichletTilt, GaussTilt, RowMoments};
use crate::quadrature::{self, QuadratureSpec};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    /// d×k topic-side natural parameters.
    pub m: DMatrix<f64>,
    /// n×k weight-side natural parameters.
    pub mtilde: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub qtilde: DMatrix<f64>,
    /// Topic estimate `F(m;Q)/sqrt(beta)`.
    pub r: DMatrix<f64>,
    /// Weight estimate `F̃(m̃;Q̃)/sqrt(beta)`.
    pub rtilde: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmfConfig {
    pub max_iters: usize,
    pub min_iters: usize,
    pub conv_threshold: f64,
    pub init_epsilon: f64,
    pub quad: QuadratureSpec,
    pub seed: u64,
}

impl NmfConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        NmfConfig {
            max_iters: 300,
            min_iters: 40,
            conv_threshold: 0.005,
            init_epsilon: 0.01,
            quad: QuadratureSpec::default_for(k),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
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

#[derive(Debug, Clone)]
pub struct UninformativePoint {
    pub q1: f64,
    pub q2: f64,
    pub qt1: f64,
    pub qt2: f64,
    pub state: VariationalState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NmfTrace {
    pub iter: usize,
    pub free_energy: f64,
    pub delta_t: f64,
    #[serde(rename = "V_W")]
    pub v_w: f64,
    #[serde(rename = "V_H")]
    pub v_h: f64,
}

#[derive(Debug, Clone)]
pub struct NmfRun {
    pub state: VariationalState,
    pub iterations: usize,
    pub converged: bool,
    pub trajectory: Vec<NmfTrace>,
}

fn check_state(state: &VariationalState, params: &ModelParams) -> Result<()> {
    let (k, d, n) = (params.k, params.d, params.n);
    let ok = state.m.shape() == (d, k)
        && state.mtilde.shape() == (n, k)
        && state.q.shape() == (k, k)
        && state.qtilde.shape() == (k, k);
    if ok {
        Ok(())
    } else {
        Err(Error::Dimension("state does not match model dimensions".into()))
    }
}

/// Weight-side half step: `m̃ = X F(m;Q)`, `Q̃ = (1/d) Σ_i G(m_i;Q)`.
fn weight_half_step(
    m: &DMatrix<f64>,
    q: &DMatrix<f64>,
    x: &DMatrix<f64>,
    params: &ModelParams,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let gt = GaussTilt::new(q, params.beta)?;
    let f = gt.mean_rows(m);
    let qtilde = gt.second_sum(m, params.d as f64);
    Ok((x * f, qtilde))
}

/// Topic-side half step: `m = Xᵀ F̃(m̃;Q̃)`, `Q = (1/d) Σ_a G̃(m̃_a;Q̃)`.
fn topic_half_step(
    mtilde: &DMatrix<f64>,
    qtilde: &DMatrix<f64>,
    x: &DMatrix<f64>,
    params: &ModelParams,
    quad: &QuadratureSpec,
) -> Result<(DMatrix<f64>, DMatrix<f64>, RowMoments)> {
    let rule = quadrature::rule(params.k, params.nu, quad)?;
    let tilt = DirichletTilt::new(&rule, qtilde, params.beta)?;
    let rows = dirichlet_rows(&tilt, mtilde)?;
    let m = x.transpose() * &rows.mean * params.beta.sqrt();
    let q = &rows.second_sum * (params.beta / params.d as f64);
    Ok((m, q, rows))
}

fn topic_estimate(m: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(GaussTilt::new(q, 1.0)?.mean_rows(m))
}

impl VariationalState {
    /// Completes a state from topic-side parameters by one weight half step.
    pub fn from_topic_side(
        m: DMatrix<f64>,
        q: DMatrix<f64>,
        x: &DMatrix<f64>,
        params: &ModelParams,
        quad: &QuadratureSpec,
    ) -> Result<Self> {
        params.check_x(x)?;
        let (mtilde, qtilde) = weight_half_step(&m, &q, x, params)?;
        let rule = quadrature::rule(params.k, params.nu, quad)?;
        let tilt = DirichletTilt::new(&rule, &qtilde, params.beta)?;
        let rtilde = dirichlet_rows(&tilt, &mtilde)?.mean;
        let r = topic_estimate(&m, &q)?;
        Ok(VariationalState { m, mtilde, q, qtilde, r, rtilde })
    }

    /// Recomputes `r`, `r̃` from the natural parameters.
    pub fn refresh(&mut self, params: &ModelParams, quad: &QuadratureSpec) -> Result<()> {
        self.r = topic_estimate(&self.m, &self.q)?;
        let rule = quadrature::rule(params.k, params.nu, quad)?;
        let tilt = DirichletTilt::new(&rule, &self.qtilde, params.beta)?;
        self.rtilde = dirichlet_rows(&tilt, &self.mtilde)?.mean;
        Ok(())
    }

    pub fn permute_topics(&self, perm: &[usize]) -> Self {
        use crate::linalg::permute_columns;
        let pq = |a: &DMatrix<f64>| DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(perm[i], perm[j])]);
        VariationalState {
            m: permute_columns(&self.m, perm),
            mtilde: permute_columns(&self.mtilde, perm),
            q: pq(&self.q),
            qtilde: pq(&self.qtilde),
            r: permute_columns(&self.r, perm),
            rtilde: permute_columns(&self.rtilde, perm),
        }
    }
}

/// One sweep of alternating minimization.
pub fn nmf_step(
    state: &VariationalState,
    x: &DMatrix<f64>,
    params: &ModelParams,
    quad: &QuadratureSpec,
) -> Result<VariationalState> {
    params.check_x(x)?;
    check_state(state, params)?;
    let (mtilde, qtilde) = weight_half_step(&state.m, &state.q, x, params)?;
    let (m, q, rows) = topic_half_step(&mtilde, &qtilde, x, params, quad)?;
    let r = topic_estimate(&m, &q)?;
    Ok(VariationalState { m, mtilde, q, qtilde, r, rtilde: rows.mean })
}

/// Naive mean field free energy of the product law encoded by `state`.
pub fn nmf_free_energy(
    state: &VariationalState,
    x: &DMatrix<f64>,
    params: &ModelParams,
    quad: &QuadratureSpec,
) -> Result<f64> {
    params.check_x(x)?;
    check_state(state, params)?;
    let beta = params.beta;
    let d = params.d as f64;
    // topic side: Σ_i KL_i = Tr(rᵀm)/2 − <Q, ΣΩ>/2 + (d/2) log det(I+Q)
    let gt = GaussTilt::new(&state.q, 1.0)?;
    let r = gt.mean_rows(&state.m);
    let omega_sum = r.transpose() * &r + &gt.inv * d;
    let kl_topic = 0.5 * r.dot(&state.m) - 0.5 * state.q.dot(&omega_sum) + 0.5 * d * gt.logdet;
    // weight side
    let rule = quadrature::rule(params.k, params.nu, quad)?;
    let tilt = DirichletTilt::new(&rule, &state.qtilde, 1.0)?;
    let rows = dirichlet_rows(&tilt, &state.mtilde)?;
    let rt = &rows.mean;
    let kl_weight = rt.dot(&state.mtilde)
        - 0.5 * state.qtilde.dot(&rows.second_sum)
        - rows.log_partition.iter().sum::<f64>();
    let coupling = -beta.sqrt() * (x * &r).dot(rt);
    let reaction = beta / (2.0 * d) * omega_sum.dot(&rows.second_sum);
    Ok(kl_topic + kl_weight + coupling + reaction)
}

fn q1_map(q: f64, k: usize, delta: f64, nu: f64, beta: f64, quad: &QuadratureSpec) -> Result<f64> {
    let kf = k as f64;
    let e = e_func(beta / (2.0 * (1.0 + q)), nu, k, quad)?;
    Ok(kf * beta * delta / (kf - 1.0) * (e - 1.0 / (kf * kf)))
}

/// Smallest root of the symmetric fixed-point equation for `q1`.
pub(crate) fn solve_q1(k: usize, delta: f64, nu: f64, beta: f64, quad: &QuadratureSpec) -> Result<f64> {
    if beta == 0.0 {
        return Ok(0.0);
    }
    let kf = k as f64;
    let upper = beta * delta / (kf * (kf * nu + 1.0));
    let g = |q: f64| -> Result<f64> { Ok(q - q1_map(q, k, delta, nu, beta, quad)?) };
    const SCAN: usize = 200;
    let mut bracket = None;
    let mut crossings = 0;
    let mut prev_q = 0.0;
    let mut prev_g = g(0.0)?;
    if prev_g >= 0.0 {
        return Ok(0.0);
    }
    for i in 1..=SCAN {
        let q = upper * i as f64 / SCAN as f64;
        let gq = g(q)?;
        if (prev_g < 0.0) != (gq < 0.0) {
            crossings += 1;
            if bracket.is_none() {
                bracket = Some((prev_q, q));
            }
        }
        prev_q = q;
        prev_g = gq;
    }
    if crossings > 1 {
        log::warn!("q1 fixed-point equation changes sign {crossings} times (k={k}, delta={delta}, nu={nu}, beta={beta})");
    }
    let (mut lo, mut hi) = match bracket {
        Some(b) => b,
        None if prev_g.abs() < 1e-10 => return Ok(upper),
        None => return Err(Error::Numerical("q1 bracket failure".into())),
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid)?;
        if gm.abs() < 1e-13 || hi - lo < 1e-15 * upper.max(1.0) {
            return Ok(mid);
        }
        if gm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn solve_q1_star(params: &ModelParams, quad: &QuadratureSpec) -> Result<f64> {
    params.validate()?;
    solve_q1(params.k, params.delta(), params.nu, params.beta, quad)
}

/// The permutation-symmetric stationary point of the iteration.
pub fn uninformative_nmf(
    params: &ModelParams,
    x: &DMatrix<f64>,
    quad: &QuadratureSpec,
) -> Result<UninformativePoint> {
    params.check_x(x)?;
    let (k, d, n) = (params.k, params.d, params.n);
    let kf = k as f64;
    let beta = params.beta;
    let delta = params.delta();
    let q1 = solve_q1_star(params, quad)?;
    let q2 = (beta * delta - kf * q1) / (kf * kf);
    let s = x.transpose() * DVector::from_element(n, 1.0);
    let denom = 1.0 + q1 + kf * q2;
    let qt1 = beta / (1.0 + q1);
    let qt2 = beta * (beta * s.norm_squared() / (kf * kf * d as f64 * denom * denom) - q2 / ((1.0 + q1) * denom));
    let eye = DMatrix::<f64>::identity(k, k);
    let jk = DMatrix::from_element(k, k, 1.0);
    let q = &eye * q1 + &jk * q2;
    let qtilde = &eye * qt1 + &jk * qt2;
    let m = DMatrix::from_fn(d, k, |i, _| beta.sqrt() / kf * s[i]);
    let xs = x * &s;
    let mtilde = DMatrix::from_fn(n, k, |a, _| beta / (kf * denom) * xs[a]);
    let r = topic_estimate(&m, &q)?;
    let rtilde = DMatrix::from_element(n, k, 1.0 / kf);
    Ok(UninformativePoint { q1, q2, qt1, qt2, state: VariationalState { m, mtilde, q, qtilde, r, rtilde } })
}

pub(crate) fn l_value(k: usize, delta: f64, nu: f64, beta: f64, quad: &QuadratureSpec) -> Result<f64> {
    if beta == 0.0 {
        return Ok(0.0);
    }
    let kf = k as f64;
    let q1 = solve_q1(k, delta, nu, beta, quad)?;
    let q2 = (beta * delta - kf * q1) / (kf * kf);
    let bracket = q2 / (1.0 + q1 + kf * q2) * (1.0 / (delta * beta) + 1.0 / kf) - 1.0 / (kf * kf);
    let pref = beta * (1.0 + delta.sqrt()).powi(2) / (1.0 + q1);
    Ok(pref * (q1 / (delta * beta) + kf * bracket.max(0.0)))
}

/// The instability functional `L(beta, k, delta, nu)`.
pub fn instability_l(params: &ModelParams, quad: &QuadratureSpec) -> Result<f64> {
    params.validate()?;
    l_value(params.k, params.delta(), params.nu, params.beta, quad)
}

/// `inf {beta : L > 1}`, located by a grid scan followed by bisection.
pub fn beta_inst(k: usize, delta: f64, nu: f64, quad: &QuadratureSpec) -> Result<f64> {
    if k < 2 || !(delta > 0.0) || !(nu > 0.0) {
        return Err(Error::InvalidParam("beta_inst needs k >= 2, delta > 0, nu > 0".into()));
    }
    let spect = crate::state_evolution::beta_spect(k, delta, nu);
    const SCAN: usize = 200;
    let mut lo = 0.0;
    let mut hi = None;
    for i in 1..=SCAN {
        let b = 2.0 * spect * i as f64 / SCAN as f64;
        if l_value(k, delta, nu, b, quad)? > 1.0 {
            hi = Some(b);
            break;
        }
        lo = b;
    }
    let mut hi = hi.ok_or_else(|| Error::Numerical("no instability below 2 beta_spect".into()))?;
    while hi - lo >= 1e-4 {
        let mid = 0.5 * (lo + hi);
        if l_value(k, delta, nu, mid, quad)? > 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Starting point of the experimental protocol: the topic estimate at the
/// symmetric point, perturbed by a Gaussian matrix of relative size `epsilon`.
pub fn perturbed_start(
    r_star: &DMatrix<f64>,
    q_star: &DMatrix<f64>,
    epsilon: f64,
    seed: u64,
) -> DMatrix<f64> {
    let mut g = rng::stream(seed, rng::STREAM_INIT);
    let noise = DMatrix::from_fn(r_star.nrows(), r_star.ncols(), |_, _| g.sample::<f64, _>(StandardNormal));
    let h0 = r_star * (1.0 - epsilon) + &noise * (epsilon * r_star.norm() / noise.norm());
    let k = q_star.nrows();
    h0 * (DMatrix::identity(k, k) + q_star)
}

pub fn run_nmf(x: &DMatrix<f64>, params: &ModelParams, cfg: &NmfConfig) -> Result<NmfRun> {
    cfg.validate()?;
    params.check_x(x)?;
    let quad = &cfg.quad;
    let star = uninformative_nmf(params, x, quad)?;
    let m0 = perturbed_start(&star.state.r, &star.state.q, cfg.init_epsilon, cfg.seed);
    let mut state = VariationalState::from_topic_side(m0, star.state.q.clone(), x, params, quad)?;
    let mut trajectory = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;
    let mut iterations = 0;
    for t in 1..=cfg.max_iters {
        let next = nmf_step(&state, x, params, quad)?;
        let delta_t = convergence_delta(&state.rtilde, &next.rtilde)?;
        state = next;
        iterations = t;
        trajectory.push(NmfTrace {
            iter: t,
            free_energy: nmf_free_energy(&state, x, params, quad)?,
            delta_t,
            v_w: v_stat(&state.rtilde),
            v_h: v_stat(&state.r),
        });
        if t >= cfg.min_iters && delta_t < cfg.conv_threshold {
            converged = true;
            break;
        }
    }
    Ok(NmfRun { state, iterations, converged, trajectory })
}

/// Spectral radius of the Jacobian of `(m, Q) -> (m⁺, Q⁺)` at `state`, by
/// power iteration on central finite differences.
pub fn nmf_jacobian_radius(
    state: &VariationalState,
    x: &DMatrix<f64>,
    params: &ModelParams,
    quad: &QuadratureSpec,
) -> Result<f64> {
    params.check_x(x)?;
    check_state(state, params)?;
    let map = |m: &DMatrix<f64>, q: &DMatrix<f64>| -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (mt, qt) = weight_half_step(m, q, x, params)?;
        let (m1, q1, _) = topic_half_step(&mt, &qt, x, params, quad)?;
        Ok((m1, q1))
    };
    let jvp = |vm: &DMatrix<f64>, vq: &DMatrix<f64>| -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        const H: f64 = 1e-6;
        let (mp, qp) = map(&(&state.m + vm * H), &(&state.q + vq * H))?;
        let (mm, qm) = map(&(&state.m - vm * H), &(&state.q - vq * H))?;
        Ok(((mp - mm) / (2.0 * H), crate::linalg::symmetrize(&(qp - qm)) / (2.0 * H)))
    };
    let mut g = rng::stream(params.d as u64 ^ 0x7a11, rng::STREAM_MISC);
    let mut vm = DMatrix::from_fn(params.d, params.k, |_, _| g.sample::<f64, _>(StandardNormal));
    let mut vq = crate::linalg::symmetrize(&DMatrix::from_fn(params.k, params.k, |_, _| {
        g.sample::<f64, _>(StandardNormal)
    }));
    let norm = (vm.norm_squared() + vq.norm_squared()).sqrt();
    vm /= norm;
    vq /= norm;
    let mut prev = f64::NAN;
    let mut est = 0.0;
    for _ in 0..100 {
        let (jm, jq) = jvp(&vm, &vq)?;
        est = (jm.norm_squared() + jq.norm_squared()).sqrt();
        if est == 0.0 {
            return Ok(0.0);
        }
        vm = jm / est;
        vq = jq / est;
        if (est - prev).abs() < 1e-6 * est {
            return Ok(est);
        }
        prev = est;
    }
    if (est - prev).abs() < 1e-3 * est {
        log::warn!("jacobian power iteration stopped at relative change {:e}", (est - prev).abs() / est);
        return Ok(est);
    }
    Err(Error::PowerIteration(prev, est))
}
