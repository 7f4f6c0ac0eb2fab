use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Dirichlet, Distribution, StandardNormal};

use mfl::priors::{dir_moments, e_func, gauss_log_partition, gauss_mean, gauss_second};
use mfl::quadrature::QuadratureSpec;
use mfl::Error;

fn grid() -> QuadratureSpec {
    QuadratureSpec::grid(512)
}

#[test]
fn gauss_mean_examples() {
    let y = DVector::from_vec(vec![0.3, -1.2, 2.0]);
    let m = gauss_mean(&y, &DMatrix::zeros(3, 3), 4.0).unwrap();
    assert_abs_diff_eq!(m, &y * 2.0, epsilon = 1e-14);
    let ones = DVector::from_element(3, 1.0);
    let q = DMatrix::from_element(3, 3, 0.5);
    let m = gauss_mean(&ones, &q, 9.0).unwrap();
    assert_abs_diff_eq!(m, &ones * (3.0 / 2.5), epsilon = 1e-14);
    let m = gauss_mean(&DVector::from_element(2, 1.0), &DMatrix::from_element(2, 2, 0.5), 4.0).unwrap();
    assert_abs_diff_eq!(m, DVector::from_element(2, 1.0), epsilon = 1e-14);
}

#[test]
fn gauss_second_examples() {
    let g = gauss_second(&DVector::zeros(2), &DMatrix::zeros(2, 2), 3.0).unwrap();
    assert_abs_diff_eq!(g, DMatrix::identity(2, 2) * 3.0, epsilon = 1e-14);
    let (k, y, q, beta) = (3, 0.7, 0.4, 2.0);
    let g = gauss_second(&DVector::from_element(k, y), &DMatrix::from_element(k, k, q), beta).unwrap();
    let kq = 1.0 + k as f64 * q;
    let want = DMatrix::identity(k, k) * beta + DMatrix::from_element(k, k, beta * (y * y / (kq * kq) - q / kq));
    assert_abs_diff_eq!(g, want, epsilon = 1e-13);
}

#[test]
fn gauss_second_matches_importance_sampling() {
    // E[h hᵀ] under exp(<y,h> - <h,Qh>/2) N(0,I), by self-normalized weights
    let y = DVector::from_vec(vec![0.4, -0.3]);
    let q = DMatrix::from_row_slice(2, 2, &[0.6, 0.2, 0.2, 0.3]);
    let beta = 1.7;
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let (mut z, mut s) = (0.0, DMatrix::<f64>::zeros(2, 2));
    for _ in 0..1_000_000 {
        let h = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let w = (y.dot(&h) - 0.5 * h.dot(&(&q * &h))).exp();
        z += w;
        s += &h * h.transpose() * w;
    }
    let mc = s * (beta / z);
    let exact = gauss_second(&y, &q, beta).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let rel = (mc[(i, j)] - exact[(i, j)]).abs() / exact.norm();
            assert!(rel < 1e-2, "entry {i}{j}: mc {} exact {}", mc[(i, j)], exact[(i, j)]);
        }
    }
}

#[test]
fn gauss_log_partition_examples_and_gradient() {
    let q0 = DMatrix::zeros(3, 3);
    assert_eq!(gauss_log_partition(&DVector::zeros(3), &q0).unwrap(), 0.0);
    let m = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    assert_abs_diff_eq!(gauss_log_partition(&m, &q0).unwrap(), m.norm_squared() / 2.0, epsilon = 1e-14);
    let q = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 0.5, 0.1, 0.0, 0.1, 0.8]);
    let beta = 2.5;
    let grad = gauss_mean(&m, &q, beta).unwrap() / beta.sqrt();
    let h = 1e-5;
    for i in 0..3 {
        let mut up = m.clone();
        up[i] += h;
        let mut dn = m.clone();
        dn[i] -= h;
        let fd = (gauss_log_partition(&up, &q).unwrap() - gauss_log_partition(&dn, &q).unwrap()) / (2.0 * h);
        assert!((fd - grad[i]).abs() <= 1e-6 * grad[i].abs().max(1.0));
    }
}

#[test]
fn non_positive_tilt_rejected() {
    let q = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.0]);
    assert!(matches!(gauss_mean(&DVector::zeros(2), &q, 1.0), Err(Error::InvalidTilt)));
    assert!(gauss_log_partition(&DVector::zeros(2), &q).is_err());
}

#[test]
fn dirichlet_symmetric_closed_forms() {
    for (k, nu, quad) in [(2, 1.0, QuadratureSpec::grid(512)), (2, 0.6, QuadratureSpec::grid(512)), (3, 1.0, QuadratureSpec::grid(64))] {
        let kf = k as f64;
        let beta = 3.0;
        let y = DVector::from_element(k, 0.8);
        let qt = DMatrix::from_element(k, k, 1.3);
        let mom = dir_moments(&y, &qt, beta, nu, &quad).unwrap();
        assert_abs_diff_eq!(mom.mean, DVector::from_element(k, beta.sqrt() / kf), epsilon = 1e-8);

        let zero = dir_moments(&DVector::zeros(k), &DMatrix::zeros(k, k), beta, nu, &quad).unwrap();
        let want = (DMatrix::identity(k, k) + DMatrix::from_element(k, k, nu)) * (beta / (kf * (kf * nu + 1.0)));
        assert_abs_diff_eq!(zero.second, want, epsilon = 1e-8);

        // Q̃ = q1 I + q2 J tilts by exp(-q1 ‖w‖²/2) on the simplex, so E enters at q1/2
        let (q1, q2) = (1.4, 0.9);
        let qt = DMatrix::identity(k, k) * q1 + DMatrix::from_element(k, k, q2);
        let mom = dir_moments(&y, &qt, beta, nu, &quad).unwrap();
        let e = e_func(q1 / 2.0, nu, k, &quad).unwrap();
        let want = DMatrix::identity(k, k) * (beta * (kf * kf * e - 1.0) / (kf * (kf - 1.0)))
            - DMatrix::from_element(k, k, beta * (kf * e - 1.0) / (kf * (kf - 1.0)));
        assert_abs_diff_eq!(mom.second, want, epsilon = 1e-8);
    }
}

#[test]
fn dirichlet_moments_match_sampling() {
    let nu = 0.8;
    let y = DVector::from_vec(vec![0.5, -0.4, 1.1]);
    let qt = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, -0.2, 0.3, 0.7, 0.1, -0.2, 0.1, 0.4]);
    let mom = dir_moments(&y, &qt, 1.0, nu, &QuadratureSpec::grid(128)).unwrap();
    let dir = Dirichlet::new([nu; 3]).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let (mut z, mut m1) = (0.0, DVector::<f64>::zeros(3));
    let n = 1_000_000;
    for _ in 0..n {
        let w = DVector::from_row_slice(&dir.sample(&mut rng));
        let t = (y.dot(&w) - 0.5 * w.dot(&(&qt * &w))).exp();
        z += t;
        m1 += &w * t;
    }
    let mc = m1 / z;
    for i in 0..3 {
        let rel = (mc[i] - mom.mean[i]).abs() / mom.mean[i];
        assert!(rel < 1e-2, "component {i}: mc {} quadrature {}", mc[i], mom.mean[i]);
    }
    assert_abs_diff_eq!(mom.log_partition, (z / n as f64).ln(), epsilon = 5e-3);
}

#[test]
fn dirichlet_shift_invariance_and_simplex() {
    let y = DVector::from_vec(vec![0.2, 1.5]);
    let qt = DMatrix::from_row_slice(2, 2, &[2.0, -0.5, -0.5, 1.0]);
    let beta = 2.0;
    let a = dir_moments(&y, &qt, beta, 1.0, &grid()).unwrap();
    let b = dir_moments(&y.add_scalar(3.0), &qt, beta, 1.0, &grid()).unwrap();
    assert_abs_diff_eq!(a.mean, b.mean, epsilon = 1e-10);
    assert_abs_diff_eq!(a.second, b.second, epsilon = 1e-10);
    assert_abs_diff_eq!(b.log_partition - a.log_partition, 3.0, epsilon = 1e-10);
    assert_abs_diff_eq!(a.mean.sum(), beta.sqrt(), epsilon = 1e-10);
    assert!(a.mean.iter().all(|&v| v > 0.0 && v < beta.sqrt()));
    assert_abs_diff_eq!(a.second.sum(), beta, epsilon = 1e-10);
    assert!(a.second.clone().symmetric_eigen().eigenvalues.min() > -1e-12);
}

#[test]
fn dirichlet_gradient_is_mean() {
    let y = DVector::from_vec(vec![0.7, -0.2, 0.4]);
    let qt = DMatrix::from_row_slice(3, 3, &[0.5, 0.1, 0.0, 0.1, 0.9, 0.2, 0.0, 0.2, 0.3]);
    let quad = QuadratureSpec::grid(128);
    let mom = dir_moments(&y, &qt, 1.0, 1.0, &quad).unwrap();
    let h = 1e-4;
    for i in 0..3 {
        let mut up = y.clone();
        up[i] += h;
        let mut dn = y.clone();
        dn[i] -= h;
        let fd = (dir_moments(&up, &qt, 1.0, 1.0, &quad).unwrap().log_partition
            - dir_moments(&dn, &qt, 1.0, 1.0, &quad).unwrap().log_partition)
            / (2.0 * h);
        assert!((fd - mom.mean[i]).abs() / mom.mean[i] < 1e-4);
    }
}

#[test]
fn grid_and_monte_carlo_agree() {
    let y = DVector::from_vec(vec![0.9, -0.3]);
    let qt = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
    let g = dir_moments(&y, &qt, 1.0, 1.0, &grid()).unwrap();
    let mc = dir_moments(&y, &qt, 1.0, 1.0, &QuadratureSpec::monte_carlo(200_000)).unwrap();
    assert_abs_diff_eq!(g.mean, mc.mean, epsilon = 1e-2);
}

#[test]
fn dirichlet_rejects_non_finite() {
    let y = DVector::from_vec(vec![f64::NAN, 0.0]);
    assert!(matches!(dir_moments(&y, &DMatrix::zeros(2, 2), 1.0, 1.0, &grid()), Err(Error::NonFinite(_))));
}

#[test]
fn e_function_values() {
    assert_abs_diff_eq!(e_func(0.0, 1.0, 2, &grid()).unwrap(), 1.0 / 3.0, epsilon = 1e-10);
    assert!((e_func(100.0, 1.0, 2, &grid()).unwrap() - 0.25).abs() < 0.01);
    // stratified sampling of w1 ~ U(0,1), which is Dir(1;2)
    let n = 1_000_000;
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        let w1 = (i as f64 + rng.random::<f64>()) / n as f64;
        let s = w1 * w1 + (1.0 - w1) * (1.0 - w1);
        let t = (-2.0 * s).exp();
        num += w1 * w1 * t;
        den += t;
    }
    let e = e_func(2.0, 1.0, 2, &grid()).unwrap();
    assert!(((num / den) - e).abs() / e < 1e-3);
}

#[test]
fn e_function_bounds_and_monotone() {
    for k in [2, 3] {
        let quad = QuadratureSpec::default_for(k);
        let mut prev = f64::INFINITY;
        for i in 0..30 {
            let q = 0.5 * i as f64;
            let e = e_func(q, 0.8, k, &quad).unwrap();
            assert!((k * k) as f64 * e >= 1.0 - 1e-12);
            assert!(e <= prev + 1e-12);
            prev = e;
        }
    }
    assert!(e_func(-1.0, 1.0, 2, &grid()).is_err());
}
