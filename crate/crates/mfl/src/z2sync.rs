//! Z2 synchronization: naive mean field and TAP free energies over the means
//! `m_i = E[σ_i]`, the synchronous fixed-point iteration, Hessians and
//! coverage of the induced sign estimates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{lanczos_extremal, min_eig_dense};
use crate::model::Z2Instance;

#[derive(Debug, Clone, PartialEq)]
pub struct Z2State {
    pub m: DVector<f64>,
}

impl Z2State {
    pub fn new(m: DVector<f64>) -> Result<Self> {
        if m.iter().any(|v| !(v.abs() < 1.0)) {
            return Err(Error::InvalidParam("Z2 means must lie in (-1, 1)".into()));
        }
        Ok(Z2State { m })
    }

    pub fn zeros(n: usize) -> Self {
        Z2State { m: DVector::zeros(n) }
    }

    pub fn norm_sq_over_n(&self) -> f64 {
        self.m.norm_squared() / self.m.len() as f64
    }
}

fn check(m: &Z2State, inst: &Z2Instance) -> Result<()> {
    if m.m.len() != inst.n() {
        return Err(Error::Dimension(format!("state has {} entries, instance {}", m.m.len(), inst.n())));
    }
    if m.m.iter().any(|v| !(v.abs() < 1.0)) {
        return Err(Error::InvalidParam("Z2 means must lie in (-1, 1)".into()));
    }
    Ok(())
}

/// Binary entropy in nats of a ±1 variable with mean `m`.
pub fn binary_entropy(m: f64) -> f64 {
    let p = 0.5 * (1.0 + m);
    let q = 0.5 * (1.0 - m);
    let t = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
    t(p) + t(q)
}

fn x0_times(inst: &Z2Instance, m: &DVector<f64>) -> DVector<f64> {
    let mut v = &inst.x * m;
    for i in 0..m.len() {
        v[i] -= inst.x[(i, i)] * m[i];
    }
    v
}

pub fn z2_nmf_free_energy(m: &Z2State, inst: &Z2Instance) -> Result<f64> {
    check(m, inst)?;
    let x0m = x0_times(inst, &m.m);
    Ok(-0.5 * inst.lambda * m.m.dot(&x0m) - m.m.iter().map(|&v| binary_entropy(v)).sum::<f64>())
}

pub fn z2_tap_free_energy(m: &Z2State, inst: &Z2Instance) -> Result<f64> {
    let n = inst.n() as f64;
    let q = m.norm_sq_over_n();
    Ok(z2_nmf_free_energy(m, inst)? - n * inst.lambda.powi(2) / 4.0 * (1.0 - q).powi(2))
}

pub fn z2_nmf_gradient(m: &Z2State, inst: &Z2Instance) -> Result<DVector<f64>> {
    check(m, inst)?;
    let x0m = x0_times(inst, &m.m);
    Ok(DVector::from_fn(m.m.len(), |i, _| -inst.lambda * x0m[i] + m.m[i].atanh()))
}

pub fn z2_tap_gradient(m: &Z2State, inst: &Z2Instance) -> Result<DVector<f64>> {
    let g = z2_nmf_gradient(m, inst)?;
    let q = m.norm_sq_over_n();
    Ok(g + &m.m * (inst.lambda.powi(2) * (1.0 - q)))
}

/// Explicit Hessian of the naive (or TAP) free energy at `m`.
pub fn z2_hessian(m: &Z2State, inst: &Z2Instance, tap: bool) -> Result<DMatrix<f64>> {
    check(m, inst)?;
    let n = inst.n();
    let mut h = inst.x0() * (-inst.lambda);
    for i in 0..n {
        h[(i, i)] += 1.0 / (1.0 - m.m[i] * m.m[i]);
    }
    if tap {
        let l2 = inst.lambda.powi(2);
        let q = m.norm_sq_over_n();
        for i in 0..n {
            h[(i, i)] += l2 * (1.0 - q);
        }
        h.ger(-2.0 * l2 / n as f64, &m.m, &m.m, 1.0);
    }
    Ok(h)
}

const DENSE_LIMIT: usize = 400;

/// Smallest Hessian eigenvalue: dense for small `n`, Lanczos otherwise.
pub fn z2_hessian_min_eig(m: &Z2State, inst: &Z2Instance, tap: bool) -> Result<f64> {
    let h = z2_hessian(m, inst, tap)?;
    if h.nrows() <= DENSE_LIMIT {
        return Ok(min_eig_dense(&h));
    }
    let steps = 200.min(h.nrows());
    Ok(lanczos_extremal(h.nrows(), steps, 11, |v| &h * v).min)
}

/// Synchronous update `m ← tanh(λ X₀ m)`.
pub fn z2_nmf_step(m: &Z2State, inst: &Z2Instance) -> Result<Z2State> {
    check(m, inst)?;
    let x0m = x0_times(inst, &m.m);
    Ok(Z2State { m: x0m.map(|v| (inst.lambda * v).tanh()) })
}

#[derive(Debug, Clone)]
pub struct Z2Run {
    pub state: Z2State,
    pub iterations: usize,
    pub converged: bool,
}

/// Iterates the synchronous update until `‖Δm‖_∞ < 1e-8` or `max_iters`.
pub fn run_z2_nmf(init: &Z2State, inst: &Z2Instance, max_iters: usize) -> Result<Z2Run> {
    let mut state = init.clone();
    for t in 1..=max_iters {
        let next = z2_nmf_step(&state, inst)?;
        let diff = (&next.m - &state.m).amax();
        state = next;
        if diff < 1e-8 {
            return Ok(Z2Run { state, iterations: t, converged: true });
        }
    }
    Ok(Z2Run { state, iterations: max_iters, converged: false })
}

/// `(actual, claimed)`: fraction of correctly signed coordinates (ties count
/// one half) and the mean posterior confidence `(1 + |m_i|)/2`.
pub fn z2_coverage(m: &Z2State, sigma: &DVector<f64>) -> Result<(f64, f64)> {
    if m.m.len() != sigma.len() {
        return Err(Error::Dimension("state and sigma lengths differ".into()));
    }
    let n = sigma.len() as f64;
    let actual = m
        .m
        .iter()
        .zip(sigma.iter())
        .map(|(&mi, &si)| {
            if mi == 0.0 {
                0.5
            } else if mi.signum() == si.signum() {
                1.0
            } else {
                0.0
            }
        })
        .sum::<f64>()
        / n;
    let claimed = m.m.iter().map(|v| 0.5 * (1.0 + v.abs())).sum::<f64>() / n;
    Ok((actual, claimed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sample_z2;
    use approx::assert_abs_diff_eq;

    #[test]
    fn entropy_values() {
        assert_abs_diff_eq!(binary_entropy(0.0), 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(binary_entropy(1.0), 0.0);
    }

    #[test]
    fn zero_state_energies() {
        let inst = sample_z2(30, 0.7, 1).unwrap();
        let z = Z2State::zeros(30);
        assert_abs_diff_eq!(z2_nmf_free_energy(&z, &inst).unwrap(), -30.0 * 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(
            z2_tap_free_energy(&z, &inst).unwrap(),
            -30.0 * 2f64.ln() - 30.0 * 0.49 / 4.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn coverage_examples() {
        let sigma = DVector::from_vec(vec![1.0, -1.0, 1.0, -1.0]);
        let (a, c) = z2_coverage(&Z2State::zeros(4), &sigma).unwrap();
        assert_eq!((a, c), (0.5, 0.5));
        let (a, c) = z2_coverage(&Z2State { m: &sigma * 0.8 }, &sigma).unwrap();
        assert_abs_diff_eq!(a, 1.0);
        assert_abs_diff_eq!(c, 0.9, epsilon = 1e-15);
    }
}
