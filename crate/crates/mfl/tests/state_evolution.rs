use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;

use mfl::linalg::p_perp;
use mfl::state_evolution::{
    beta_bayes, beta_spect, gaussian_overlap, rs_free_energy, rs_gradients, se_contraction_factor, se_step,
    se_step_mmse, se_trajectory, SEState, SeEngine, SeParams, SymmetricChannel,
};
use mfl::QuadratureSpec;

fn quad() -> QuadratureSpec {
    QuadratureSpec::grid(256)
}

fn jk(k: usize) -> DMatrix<f64> {
    DMatrix::from_element(k, k, 1.0)
}

/// Coefficient of `P⊥` in a matrix of the form `a P⊥ + b P∥`.
fn perp_coeff(m: &DMatrix<f64>) -> f64 {
    let k = m.nrows();
    let pp = p_perp(k);
    (&pp * m * &pp).trace() / (k - 1) as f64
}

#[test]
fn spectral_threshold_closed_form() {
    assert_eq!(beta_spect(2, 1.0, 1.0), 6.0);
    assert_eq!(beta_spect(3, 1.0, 1.0), 12.0);
    assert_eq!(beta_spect(2, 4.0, 1.0), 3.0);
}

#[test]
fn contraction_factor_values() {
    let f = |beta| se_contraction_factor(&SeParams::new(2, 1.0, 1.0, beta).unwrap());
    assert_abs_diff_eq!(f(6.0), 1.0, epsilon = 1e-14);
    assert_abs_diff_eq!(f(3.0), 0.25, epsilon = 1e-14);
    let grid: Vec<f64> = (1..40).map(|i| f(0.25 * i as f64)).collect();
    assert!(grid.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn zero_overlap_step() {
    let p = SeParams::new(3, 1.5, 0.7, 4.0).unwrap();
    let engine = SeEngine::new(3, 0.7, 5000, 1).unwrap();
    let next = se_step(&SEState::zero(3), &p, &QuadratureSpec::default_for(3), &engine).unwrap();
    assert_abs_diff_eq!(next.m, jk(3) * (p.delta * p.beta / 9.0), epsilon = 1e-8);
}

#[test]
fn uninformative_point_is_fixed() {
    for (k, delta, beta) in [(2, 1.0, 4.0), (3, 2.0, 7.0)] {
        let p = SeParams::new(k, delta, 1.0, beta).unwrap();
        let engine = SeEngine::new(k, 1.0, 5000, 2).unwrap();
        let star = SEState::uninformative(&p);
        let kf = k as f64;
        let rho0 = delta * beta * beta / (kf * delta * beta + kf * kf);
        assert_abs_diff_eq!(gaussian_overlap(&star.m, beta).unwrap(), jk(k) * rho0, epsilon = 1e-12);
        let next = se_step(&star, &p, &QuadratureSpec::default_for(k), &engine).unwrap();
        assert_abs_diff_eq!(next.m, star.m, epsilon = 1e-8);
    }
}

#[test]
fn mmse_form_differs_by_prior_mean() {
    let p = SeParams::new(2, 1.0, 1.0, 5.0).unwrap();
    let engine = SeEngine::new(2, 1.0, 5000, 3).unwrap();
    let s = SEState::from_m(DMatrix::identity(2, 2) * 0.8 + jk(2) * 0.3, p.beta).unwrap();
    let a = se_step(&s, &p, &quad(), &engine).unwrap();
    let b = se_step_mmse(&s, &p, &quad(), &engine).unwrap();
    // the mmse form has a zero eigenvalue along 1_k, where PSD clipping
    // absorbs the sampling noise
    let gap = &a.m - &b.m - jk(2) * (p.delta * p.beta / 4.0);
    assert!(gap.amax() < 2e-3, "{gap}");
}

#[test]
fn informative_fixed_point_above_spectral_threshold() {
    let p = SeParams::new(2, 1.0, 1.0, 9.0).unwrap();
    let engine = SeEngine::new(2, 1.0, 20_000, 4).unwrap();
    let traj = se_trajectory(&(DMatrix::identity(2, 2) * 10.0), &p, &quad(), &engine, 60).unwrap();
    let last = &traj[60];
    assert!((&last.m - &traj[59].m).norm() < 1e-3 * last.m.norm());
    assert!(perp_coeff(&last.mtilde) / p.beta.sqrt() > 0.1);
    for s in &traj {
        assert!(s.m.clone().symmetric_eigen().eigenvalues.min() >= -1e-10);
    }
}

#[test]
fn trajectory_collapses_below_spectral_threshold() {
    let p = SeParams::new(2, 1.0, 1.0, 4.0).unwrap();
    let engine = SeEngine::new(2, 1.0, 20_000, 5).unwrap();
    let star = SEState::uninformative(&p);
    let traj = se_trajectory(&(&star.m + p_perp(2) * 0.5), &p, &quad(), &engine, 40).unwrap();
    assert!(perp_coeff(&traj[40].m) < 1e-3);
}

#[test]
fn empirical_contraction_matches_factor() {
    let p = SeParams::new(2, 1.0, 1.0, 3.0).unwrap();
    let engine = SeEngine::new(2, 1.0, 100_000, 6).unwrap();
    let star = SEState::uninformative(&p);
    let eps = 0.02;
    let s = SEState::from_m(&star.m + p_perp(2) * eps, p.beta).unwrap();
    let next = se_step(&s, &p, &quad(), &engine).unwrap();
    let ratio = perp_coeff(&(&next.m - &star.m)) / eps;
    let want = se_contraction_factor(&p);
    assert!((ratio - want).abs() / want < 0.1, "{ratio} vs {want}");
}

#[test]
fn gaussian_channel_closed_form() {
    let engine = SeEngine::new(3, 1.0, 100_000, 7).unwrap();
    let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.2, 0.7, 0.0, 0.1, 0.0, 1.4]);
    let beta = 2.5;
    let mc = engine.gaussian_channel_mc(&m, beta).unwrap();
    let exact = gaussian_overlap(&m, beta).unwrap();
    assert!((&mc - &exact).norm() / exact.norm() < 0.01);
}

#[test]
fn symmetric_subspace_is_preserved() {
    let p = SeParams::new(2, 1.0, 1.0, 7.0).unwrap();
    let engine = SeEngine::new(2, 1.0, 100_000, 8).unwrap();
    let s = SEState::from_m(DMatrix::identity(2, 2) * 0.6 + jk(2) * 0.4, p.beta).unwrap();
    let next = se_step(&s, &p, &quad(), &engine).unwrap();
    let m = &next.m;
    assert!((m[(0, 0)] - m[(1, 1)]).abs() / m[(0, 0)] < 0.01);
}

#[test]
fn symmetric_channel_matches_full_recursion() {
    let p = SeParams::new(2, 1.0, 1.0, 7.0).unwrap();
    let engine = SeEngine::new(2, 1.0, 200_000, 9).unwrap();
    let channel = SymmetricChannel::new(2, 1.0, &quad(), 12.0, 120).unwrap();
    for alpha in [0.2, 0.8, 2.0] {
        let m = DMatrix::identity(2, 2) * alpha + jk(2) * 0.7;
        let next = se_step(&SEState::from_m(m, p.beta).unwrap(), &p, &quad(), &engine).unwrap();
        let a = p.beta * alpha / (1.0 + alpha);
        let want = p.delta * p.beta * channel.c1(a);
        let got = perp_coeff(&next.m);
        assert!((got - want).abs() / want < 0.02, "alpha {alpha}: {got} vs {want}");
    }
}

#[test]
fn rs_stationary_at_uninformative_point() {
    let p = SeParams::new(2, 1.0, 1.0, 4.0).unwrap();
    let engine = SeEngine::new(2, 1.0, 20_000, 10).unwrap();
    let star = SEState::uninformative(&p);
    let (dm, dmt) = rs_gradients(&star.m, &star.mtilde, &p, &quad(), &engine).unwrap();
    assert!(dm.amax() < 1e-10);
    assert!(dmt.amax() < 1e-10);
}

#[test]
fn rs_constant_without_signal() {
    let p = SeParams::new(2, 1.0, 1.0, 0.0).unwrap();
    let engine = SeEngine::new(2, 1.0, 2000, 11).unwrap();
    let a = rs_free_energy(&DMatrix::identity(2, 2), &p, &quad(), &engine).unwrap();
    let b = rs_free_energy(&(jk(2) * 3.0), &p, &quad(), &engine).unwrap();
    assert_eq!(a, b);
}

#[test]
fn rs_order_flips_near_six() {
    let channel = SymmetricChannel::new(2, 1.0, &quad(), 12.0, 240).unwrap();
    let wins = |beta| channel.informative_wins(&SeParams::new(2, 1.0, 1.0, beta).unwrap()).unwrap();
    assert!(!wins(5.7));
    assert!(wins(6.3));
}

#[test]
fn bayes_threshold_k2() {
    let b = beta_bayes(2, 1.0, 1.0, &quad()).unwrap();
    assert!((b - 6.0).abs() < 0.2, "{b}");
}

#[test]
fn engine_rejects_bad_input() {
    assert!(SeEngine::new(2, 1.0, 10, 0).is_err());
    assert!(SeEngine::new(1, 1.0, 5000, 0).is_err());
    assert!(SeParams::new(2, -1.0, 1.0, 1.0).is_err());
}
