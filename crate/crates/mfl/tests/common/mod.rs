#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use mfl::linalg::top_singular_value;

pub struct TiltedSample {
    pub mean: DVector<f64>,
    pub second: DMatrix<f64>,
    pub log_partition: f64,
}

/// Moments of `exp(<y,w> - <w,Q̃w>/2)` against the uniform law on the
/// simplex (`nu = 1`), `k` in {2, 3}, by stratified sampling with `side^(k-1)`
/// points. For `k = 3` two sorted uniforms give the spacings.
pub fn uniform_simplex_tilt(y: &DVector<f64>, qt: &DMatrix<f64>, side: usize, seed: u64) -> TiltedSample {
    let k = y.len();
    assert!(k == 2 || k == 3);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut z = 0.0;
    let mut m1 = DVector::zeros(k);
    let mut m2 = DMatrix::zeros(k, k);
    let mut w = DVector::zeros(k);
    let cells = if k == 2 { 1 } else { side };
    let count = (side * cells) as f64;
    for i in 0..side {
        for j in 0..cells {
            let u1 = (i as f64 + rng.random::<f64>()) / side as f64;
            if k == 2 {
                w[0] = u1;
                w[1] = 1.0 - u1;
            } else {
                let u2 = (j as f64 + rng.random::<f64>()) / side as f64;
                let (lo, hi) = if u1 < u2 { (u1, u2) } else { (u2, u1) };
                w[0] = lo;
                w[1] = hi - lo;
                w[2] = 1.0 - hi;
            }
            let t = (y.dot(&w) - 0.5 * w.dot(&(qt * &w))).exp();
            z += t;
            m1 += &w * t;
            m2 += &w * w.transpose() * t;
        }
    }
    TiltedSample { mean: m1 / z, second: m2 / z, log_partition: (z / count).ln() }
}

/// Top singular value of `γ u vᵀ + α∥ P_u Z + α⊥ P_u^⊥ Z`, `Z` n×d with
/// `N(0, 1/d)` entries.
pub fn spiked_smax(gamma: f64, a_par: f64, a_perp: f64, n: usize, d: usize, seed: u64) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let sd = 1.0 / (d as f64).sqrt();
    let z = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal) * sd);
    let mut u = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    u /= u.norm();
    let mut v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    v /= v.norm();
    let uz = u.transpose() * &z;
    let m = &z * a_perp + &u * &uz * (a_par - a_perp) + &u * v.transpose() * gamma;
    top_singular_value(&m, 200, seed)
}

/// Central difference of `f` along `dir`.
pub fn directional_fd<F: Fn(f64) -> f64>(f: F, h: f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}
