//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Projector onto the complement of the all-ones direction.
pub fn p_perp(k: usize) -> DMatrix<f64> {
    DMatrix::identity(k, k) - DMatrix::from_element(k, k, 1.0 / k as f64)
}

pub fn ones(k: usize) -> DMatrix<f64> {
    DMatrix::from_element(k, k, 1.0)
}

/// Symmetric PSD square root, negative eigenvalues clipped at zero.
pub fn sym_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let d = eig.eigenvalues.map(|x| x.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Projects a symmetric matrix onto the PSD cone.
pub fn clip_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let d = eig.eigenvalues.map(|x| x.max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

pub fn min_eig_dense(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(a)).eigenvalues.min()
}

/// Inverse and log-determinant of a symmetric positive definite matrix.
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("spd_inverse"));
    }
    let chol = nalgebra::Cholesky::new(symmetrize(a)).ok_or(Error::InvalidTilt)?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    Ok((symmetrize(&chol.inverse()), logdet))
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// All permutations of `0..k` in lexicographic order.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(k), &mut vec![false; k], &mut out);
    out
}

/// Returns `a` with its columns reordered: column `j` of the result is column `perm[j]` of `a`.
pub fn permute_columns(a: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, perm[j])])
}

#[derive(Debug, Clone, Copy)]
pub struct Extremal {
    pub min: f64,
    pub max: f64,
}

/// Lanczos with full reorthogonalization for the extremal eigenvalues of a
/// symmetric operator given by `matvec`.
pub fn lanczos_extremal<F>(n: usize, steps: usize, seed: u64, mut matvec: F) -> Extremal
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let steps = steps.min(n).max(1);
    let mut r = rng::stream(seed, rng::STREAM_MISC);
    let mut q = DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal));
    q /= q.norm();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(steps);
    let mut alpha = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);
    for j in 0..steps {
        let mut w = matvec(&q);
        let a = q.dot(&w);
        w.axpy(-a, &q, 1.0);
        if j > 0 {
            w.axpy(-beta[j - 1], &basis[j - 1], 1.0);
        }
        basis.push(q.clone());
        for _ in 0..2 {
            for v in &basis {
                let c = v.dot(&w);
                w.axpy(-c, v, 1.0);
            }
        }
        alpha.push(a);
        let b = w.norm();
        if b < 1e-12 || j + 1 == steps {
            break;
        }
        beta.push(b);
        q = w / b;
    }
    let m = alpha.len();
    let t = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let ev = SymmetricEigen::new(t).eigenvalues;
    Extremal { min: ev.min(), max: ev.max() }
}

/// Largest singular value of a dense matrix via Lanczos on `AᵀA`.
pub fn top_singular_value(a: &DMatrix<f64>, steps: usize, seed: u64) -> f64 {
    let at = a.transpose();
    let ext = lanczos_extremal(a.ncols(), steps, seed, |v| &at * (a * v));
    ext.max.max(0.0).sqrt()
}
