mod common;

use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use common::{rel_err, spiked_smax};
use mfl::model::sample_lda;
use mfl::priors::{dir_moments, gauss_mean};
use mfl::state_evolution::{se_trajectory, SEState, SeEngine, SeParams};
use mfl::tap_amp::{
    amp_from_overlap, amp_step, bbp_singular_value, damped_amp_step, run_amp, tap_free_energy, tap_gradient,
    tap_hessian, tap_hessian_min_eig, tap_uninformative, AmpConfig, Onsager,
};
use mfl::{ModelParams, QuadratureSpec};

fn quad() -> QuadratureSpec {
    QuadratureSpec::grid(256)
}

fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut g = ChaCha20Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| g.sample::<f64, _>(StandardNormal))
}

/// A random interior point of the simplex in each row.
fn simplex_rows(n: usize, k: usize, seed: u64) -> DMatrix<f64> {
    let mut g = ChaCha20Rng::seed_from_u64(seed);
    let mut out = DMatrix::from_fn(n, k, |_, _| 0.5 + g.random::<f64>());
    for a in 0..n {
        let s = out.row(a).sum();
        out.row_mut(a).unscale_mut(s);
    }
    out
}

#[test]
fn uninformative_point_is_fixed() {
    let p = ModelParams::with_delta(2, 120, 1.0, 3.0, 1.0).unwrap();
    let ds = sample_lda(&p, 1).unwrap();
    let s0 = tap_uninformative(&p, &ds.x, &quad()).unwrap();
    assert!(s0.rtilde.iter().all(|&v| (v - 0.5).abs() < 1e-14));
    let s1 = amp_step(&s0, &ds.x, &p, &quad()).unwrap();
    assert_abs_diff_eq!(s1.m, s0.m, epsilon = 1e-6);
    assert_abs_diff_eq!(s1.q, s0.q, epsilon = 1e-6);
    assert_abs_diff_eq!(s1.qtilde, s0.qtilde, epsilon = 1e-6);
    assert_abs_diff_eq!(s1.rtilde, s0.rtilde, epsilon = 1e-6);
    let mut cfg = AmpConfig::new(2, 0);
    cfg.quad = quad();
    let s2 = damped_amp_step(&s0, &ds.x, &p, &cfg).unwrap();
    assert_abs_diff_eq!(s2.m, s0.m, epsilon = 1e-6);
}

#[test]
fn uninformative_q0_value() {
    let p = ModelParams::with_delta(2, 50, 1.0, 4.0, 1.0).unwrap();
    let ds = sample_lda(&p, 2).unwrap();
    let s = tap_uninformative(&p, &ds.x, &quad()).unwrap();
    assert_abs_diff_eq!(s.q, DMatrix::from_element(2, 2, 1.0), epsilon = 1e-14);
}

#[test]
fn zero_data_is_pure_back_reaction() {
    let p = ModelParams::new(2, 30, 40, 2.0, 1.0).unwrap();
    let x = DMatrix::zeros(40, 30);
    let ds = sample_lda(&p, 3).unwrap();
    let mut s = amp_from_overlap(&ds.h, &(DMatrix::identity(2, 2) * 0.5), &p, 4).unwrap();
    s.memory = true;
    let next = amp_step(&s, &x, &p, &quad()).unwrap();
    let f = gauss_mean_rows(&s.m, &s.q, p.beta);
    assert_abs_diff_eq!(next.m, -(f * &next.omega_tilde), epsilon = 1e-12);
}

fn gauss_mean_rows(m: &DMatrix<f64>, q: &DMatrix<f64>, beta: f64) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 0..m.nrows() {
        let row = gauss_mean(&m.row(i).transpose(), q, beta).unwrap();
        out.row_mut(i).copy_from(&row.transpose());
    }
    out
}

#[test]
fn calibration_holds_after_each_step() {
    let p = ModelParams::with_delta(2, 80, 1.0, 5.0, 1.0).unwrap();
    let ds = sample_lda(&p, 5).unwrap();
    let mut s = tap_uninformative(&p, &ds.x, &quad()).unwrap();
    s.m += gaussian(80, 2, 6) * 0.3;
    for _ in 0..3 {
        let prev = s.clone();
        s = amp_step(&s, &ds.x, &p, &quad()).unwrap();
        let d = p.d as f64;
        let q = s.rtilde.transpose() * &s.rtilde * (p.beta / d);
        assert_abs_diff_eq!(s.q, q, epsilon = 1e-12);
        let f = gauss_mean_rows(&prev.m, &prev.q, p.beta);
        assert_abs_diff_eq!(s.qtilde, f.transpose() * f / d, epsilon = 1e-12);
        let ev = s.omega_tilde.clone().symmetric_eigen().eigenvalues;
        assert!(ev.min() > -1e-12);
        assert_abs_diff_eq!(s.omega, s.omega.transpose(), epsilon = 1e-14);
    }
}

#[test]
fn onsager_matrices_are_averaged_jacobians() {
    let p = ModelParams::with_delta(2, 40, 1.0, 3.0, 1.0).unwrap();
    let ds = sample_lda(&p, 7).unwrap();
    let mut s = tap_uninformative(&p, &ds.x, &quad()).unwrap();
    s.m += gaussian(40, 2, 8) * 0.5;
    let next = amp_step(&s, &ds.x, &p, &quad()).unwrap();
    let h = 1e-5;
    let (k, d) = (2, p.d as f64);
    // Ω̃ = (1/d) Σ_a ∂F̃(m̃_a)/∂m̃_a
    let mut jac = DMatrix::zeros(k, k);
    for a in 0..p.n {
        let y = next.mtilde.row(a).transpose();
        for r in 0..k {
            let mut up = y.clone();
            up[r] += h;
            let mut dn = y.clone();
            dn[r] -= h;
            let fu = dir_moments(&up, &next.qtilde, p.beta, 1.0, &quad()).unwrap().mean;
            let fd = dir_moments(&dn, &next.qtilde, p.beta, 1.0, &quad()).unwrap().mean;
            for c in 0..k {
                jac[(r, c)] += (fu[c] - fd[c]) / (2.0 * h) / d;
            }
        }
    }
    assert!((&jac - &next.omega_tilde).norm() / next.omega_tilde.norm() < 1e-4);
    // Ω = (1/d) Σ_i ∂F(m_i)/∂m_i
    let mut jac = DMatrix::zeros(k, k);
    for i in 0..p.d {
        let y = s.m.row(i).transpose();
        for r in 0..k {
            let mut up = y.clone();
            up[r] += h;
            let mut dn = y.clone();
            dn[r] -= h;
            let diff = (gauss_mean(&up, &s.q, p.beta).unwrap() - gauss_mean(&dn, &s.q, p.beta).unwrap()) / (2.0 * h);
            for c in 0..k {
                jac[(r, c)] += diff[c] / d;
            }
        }
    }
    assert!((&jac - &next.omega).norm() / next.omega.norm() < 1e-4);
}

#[test]
fn unit_damping_matches_plain_step() {
    let p = ModelParams::with_delta(3, 30, 1.5, 6.0, 0.8).unwrap();
    let ds = sample_lda(&p, 9).unwrap();
    let q = QuadratureSpec::grid(64);
    let mut s0 = tap_uninformative(&p, &ds.x, &q).unwrap();
    s0.m += gaussian(30, 3, 10) * 0.4;
    for onsager in [Onsager::History, Onsager::Accumulated] {
        let mut cfg = AmpConfig::new(3, 0);
        cfg.gamma = 1.0;
        cfg.onsager = onsager;
        cfg.quad = q;
        let (mut a, mut b) = (s0.clone(), s0.clone());
        for _ in 0..3 {
            a = amp_step(&a, &ds.x, &p, &q).unwrap();
            b = damped_amp_step(&b, &ds.x, &p, &cfg).unwrap();
            assert!((&a.m - &b.m).amax() < 1e-8, "{onsager:?}");
            assert!((&a.mtilde - &b.mtilde).amax() < 1e-8, "{onsager:?}");
        }
    }
}

#[test]
fn tap_gradient_matches_finite_differences() {
    let p = ModelParams::with_delta(2, 25, 1.2, 3.0, 1.0).unwrap();
    let ds = sample_lda(&p, 11).unwrap();
    let r = gaussian(25, 2, 12) * 0.7;
    let rt = simplex_rows(p.n, 2, 13);
    let (gr, gt) = tap_gradient(&r, &rt, &ds.x, &p, &quad()).unwrap();
    let h = 1e-5;
    let dir_r = gaussian(25, 2, 14);
    let fd = (tap_free_energy(&(&r + &dir_r * h), &rt, &ds.x, &p, &quad()).unwrap()
        - tap_free_energy(&(&r - &dir_r * h), &rt, &ds.x, &p, &quad()).unwrap())
        / (2.0 * h);
    assert!(rel_err(fd, gr.dot(&dir_r)) < 1e-4, "fd {fd} analytic {}", gr.dot(&dir_r));
    // tangent direction: rows sum to zero
    let raw = gaussian(p.n, 2, 15) * 0.05;
    let dir_t = DMatrix::from_fn(p.n, 2, |a, c| raw[(a, c)] - raw.row(a).mean());
    let fd = (tap_free_energy(&r, &(&rt + &dir_t * h), &ds.x, &p, &quad()).unwrap()
        - tap_free_energy(&r, &(&rt - &dir_t * h), &ds.x, &p, &quad()).unwrap())
        / (2.0 * h);
    assert!(rel_err(fd, gt.dot(&dir_t)) < 1e-4, "fd {fd} analytic {}", gt.dot(&dir_t));
}

#[test]
fn uninformative_point_is_stationary() {
    let p = ModelParams::with_delta(2, 40, 1.0, 3.0, 1.0).unwrap();
    let ds = sample_lda(&p, 16).unwrap();
    let s = tap_uninformative(&p, &ds.x, &quad()).unwrap();
    let h = 1e-5;
    for j in 0..20 {
        let dr = gaussian(40, 2, 100 + j);
        let raw = gaussian(p.n, 2, 200 + j) * 0.1;
        let dt = DMatrix::from_fn(p.n, 2, |a, c| raw[(a, c)] - raw.row(a).mean());
        let fe = |t: f64| tap_free_energy(&(&s.r + &dr * t), &(&s.rtilde + &dt * t), &ds.x, &p, &quad()).unwrap();
        let deriv = (fe(h) - fe(-h)) / (2.0 * h);
        assert!(deriv.abs() < 1e-5, "direction {j}: {deriv}");
    }
}

#[test]
fn zero_signal_free_energy_vanishes() {
    let p = ModelParams::new(2, 10, 12, 0.0, 1.0).unwrap();
    let ds = sample_lda(&p, 17).unwrap();
    let f = tap_free_energy(&DMatrix::zeros(10, 2), &DMatrix::from_element(12, 2, 0.5), &ds.x, &p, &quad()).unwrap();
    assert_abs_diff_eq!(f, 0.0, epsilon = 1e-10);
}

#[test]
fn free_energy_gauge_invariance() {
    let p = ModelParams::with_delta(2, 15, 1.0, 2.0, 1.0).unwrap();
    let ds = sample_lda(&p, 18).unwrap();
    let s = tap_uninformative(&p, &ds.x, &quad()).unwrap();
    let rt = simplex_rows(p.n, 2, 19);
    let (_, gt) = tap_gradient(&s.r, &rt, &ds.x, &p, &quad()).unwrap();
    // adding c 1_k to a row of the gradient is invisible on the tangent space
    let raw = gaussian(p.n, 2, 29);
    let dir = DMatrix::from_fn(p.n, 2, |a, c| raw[(a, c)] - raw.row(a).mean());
    let shifted = DMatrix::from_fn(p.n, 2, |a, c| gt[(a, c)] + a as f64);
    assert_abs_diff_eq!(gt.dot(&dir), shifted.dot(&dir), epsilon = 1e-10);
    assert!(tap_free_energy(&s.r, &DMatrix::from_element(p.n, 2, 0.7), &ds.x, &p, &quad()).is_err());
}

#[test]
fn hessian_structure() {
    let p = ModelParams::with_delta(2, 20, 1.0, 0.0, 1.0).unwrap();
    let ds = sample_lda(&p, 20).unwrap();
    let h = tap_hessian(&p, &ds.x).unwrap();
    assert_eq!(h.shape(), (40, 40));
    assert_abs_diff_eq!(h.view((0, 20), (20, 20)).norm(), 0.0);
    assert_abs_diff_eq!(tap_hessian_min_eig(&p, &ds.x).unwrap(), 1.0, epsilon = 1e-12);
}

#[test]
fn hessian_positive_below_spectral_threshold() {
    for (beta, seed) in [(2.0, 21), (4.8, 22)] {
        let p = ModelParams::with_delta(2, 200, 1.0, beta, 1.0).unwrap();
        let l = tap_hessian_min_eig(&p, &sample_lda(&p, seed).unwrap().x).unwrap();
        assert!(l > 0.0, "beta {beta}: {l}");
    }
}

/// Above the spectral threshold the outlier singular value of the data sits
/// exactly on the Schur-complement boundary, so the smallest eigenvalue tends to 0.
#[test]
fn hessian_is_marginal_above_spectral_threshold() {
    for (k, delta, nu, beta) in [(2, 1.0, 1.0, 9.0), (3, 0.5, 1.0, 25.0), (2, 2.0, 0.5, 5.0)] {
        let c = (k as f64) * (k as f64 * nu + 1.0);
        let a = 1.0 + delta * beta / c;
        let r = beta + c;
        let theta = (beta * delta / c).sqrt();
        assert!(theta * theta > delta.sqrt());
        let s = bbp_singular_value(theta, 1.0, 1.0, delta).unwrap();
        assert_abs_diff_eq!(beta * s * s / r, a, epsilon = 1e-12);
    }
    let p = ModelParams::with_delta(2, 300, 1.0, 9.0, 1.0).unwrap();
    let l = tap_hessian_min_eig(&p, &sample_lda(&p, 23).unwrap().x).unwrap();
    assert!(l.abs() < 0.05, "{l}");
}

#[test]
fn bbp_branches_meet() {
    for (ap, aq, delta) in [(0.0, 1.0, 1.0), (0.5, 1.2, 0.5), (1.0, 1.0, 2.0), (0.3, 0.8, 1.5)] {
        let crit: f64 = (1.0 + f64::sqrt(delta)) * aq * aq - ap * ap;
        if crit <= 0.0 {
            continue;
        }
        let lo = bbp_singular_value(crit.sqrt() * (1.0 - 1e-9), ap, aq, delta).unwrap();
        let hi = bbp_singular_value(crit.sqrt() * (1.0 + 1e-9), ap, aq, delta).unwrap();
        assert!((lo - hi).abs() < 1e-6, "{lo} vs {hi}");
    }
}

#[test]
fn bbp_matches_sampled_singular_value() {
    let mut g = ChaCha20Rng::seed_from_u64(22);
    for trial in 0..3 {
        let ap = g.random_range(0.0..1.0);
        let aq = g.random_range(0.5..1.5);
        let crit: f64 = 2.0 * aq * aq - ap * ap;
        // stay away from the transition, where finite-size corrections are largest
        let gamma = if trial % 2 == 0 { (crit + 2.0).sqrt() } else { (0.3 * crit).sqrt() };
        let want = bbp_singular_value(gamma, ap, aq, 1.0).unwrap();
        let got = spiked_smax(gamma, ap, aq, 1500, 1500, 30 + trial);
        assert!(rel_err(got, want) < 0.03, "gamma {gamma} a_par {ap} a_perp {aq}: {got} vs {want}");
    }
}

#[test]
fn first_step_overlap_tracks_state_evolution() {
    let p = ModelParams::with_delta(2, 2000, 1.0, 9.0, 1.0).unwrap();
    let sp = SeParams::from(&p);
    let m0 = SEState::uninformative(&sp).m + DMatrix::identity(2, 2) * 0.3;
    let engine = SeEngine::new(2, 1.0, 50_000, 25).unwrap();
    let traj = se_trajectory(&m0, &sp, &quad(), &engine, 1).unwrap();
    let want = &traj[1].mtilde / p.beta.sqrt();
    let seeds = 4;
    let mut mean_overlap = DMatrix::zeros(2, 2);
    for seed in 0..seeds {
        let ds = sample_lda(&p, 23 + seed).unwrap();
        let s0 = amp_from_overlap(&ds.h, &m0, &p, 24 + seed).unwrap();
        let s1 = amp_step(&s0, &ds.x, &p, &quad()).unwrap();
        let gap = (&s1.q - &traj[1].m).norm() / traj[1].m.norm();
        assert!(gap < 0.05, "Q1 {} vs M1 {}", s1.q, traj[1].m);
        // the estimate is F(m;Q) = sqrt(beta) r
        mean_overlap += ds.h.transpose() * &s1.r * (p.beta.sqrt() / (p.d * seeds as usize) as f64);
    }
    let err = (&mean_overlap - &want).norm() / want.norm();
    assert!(err < 0.05, "overlap {mean_overlap} vs {want}");
}

#[test]
fn runs_are_deterministic() {
    let p = ModelParams::with_delta(2, 60, 1.0, 4.0, 1.0).unwrap();
    let ds = sample_lda(&p, 26).unwrap();
    let mut cfg = AmpConfig::new(2, 27);
    cfg.max_iters = 20;
    cfg.min_iters = 5;
    cfg.quad = quad();
    let a = run_amp(&ds.x, &p, &cfg).unwrap();
    let b = run_amp(&ds.x, &p, &cfg).unwrap();
    assert_eq!(a.state, b.state);
    assert_eq!(a.trajectory.len(), a.iterations);
}

#[test]
fn zero_perturbation_stays_at_uninformative_point() {
    let p = ModelParams::with_delta(2, 60, 1.0, 4.0, 1.0).unwrap();
    let ds = sample_lda(&p, 28).unwrap();
    let mut cfg = AmpConfig::new(2, 0);
    cfg.init_epsilon = 0.0;
    cfg.max_iters = 10;
    cfg.min_iters = 10;
    cfg.quad = quad();
    let run = run_amp(&ds.x, &p, &cfg).unwrap();
    let s = tap_uninformative(&p, &ds.x, &quad()).unwrap();
    assert_abs_diff_eq!(run.state.rtilde, s.rtilde, epsilon = 1e-8);
    assert!(run.trajectory.iter().all(|t| t.v_w < 1e-8));
}
