//! Moments and log-partition functions of the exponentially tilted Gaussian
//! and Dirichlet priors.
//!
//! For the Gaussian prior the tilt `exp(<y,h> - <h,Q h>/2)` gives closed forms
//! `F = sqrt(beta) (I+Q)^-1 y`, `G = beta {(I+Q)^-1 y yᵀ (I+Q)^-1 + (I+Q)^-1}`.
//! The Dirichlet side is integrated with a [`SimplexRule`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::spd_inverse;
use crate::quadrature::{self, QuadratureSpec, Scheme, SimplexRule};

fn check_finite(name: &'static str, xs: &[f64]) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(name))
    }
}

fn check_square(q: &DMatrix<f64>, k: usize) -> Result<()> {
    if q.nrows() != k || q.ncols() != k {
        return Err(Error::Dimension(format!("expected {k}x{k} tilt, got {}x{}", q.nrows(), q.ncols())));
    }
    Ok(())
}

/// Gaussian tilt with a fixed quadratic part `Q`, shared across rows.
#[derive(Debug, Clone)]
pub struct GaussTilt {
    pub inv: DMatrix<f64>,
    pub logdet: f64,
    pub beta: f64,
}

impl GaussTilt {
    pub fn new(q: &DMatrix<f64>, beta: f64) -> Result<Self> {
        check_finite("gaussian tilt", q.as_slice())?;
        let k = q.nrows();
        check_square(q, k)?;
        let (inv, logdet) = spd_inverse(&(DMatrix::identity(k, k) + q))?;
        Ok(GaussTilt { inv, logdet, beta })
    }

    pub fn k(&self) -> usize {
        self.inv.nrows()
    }

    /// `F(y;Q) = sqrt(beta) (I+Q)^-1 y`.
    pub fn mean(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.inv * y * self.beta.sqrt()
    }

    /// `G(y;Q) = beta {(I+Q)^-1 y yᵀ (I+Q)^-1 + (I+Q)^-1}`.
    pub fn second(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let v = &self.inv * y;
        (&v * v.transpose() + &self.inv) * self.beta
    }

    /// `phi(m,Q) = -Tr log(I+Q)/2 + <m,(I+Q)^-1 m>/2`.
    pub fn log_partition(&self, m: &DVector<f64>) -> f64 {
        -0.5 * self.logdet + 0.5 * m.dot(&(&self.inv * m))
    }

    /// Applies `F` to every row of `m` (rows × k).
    pub fn mean_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        m * &self.inv * self.beta.sqrt()
    }

    /// `(1/scale) Σ_i G(m_i;Q)`, computed in closed form.
    pub fn second_sum(&self, m: &DMatrix<f64>, scale: f64) -> DMatrix<f64> {
        let v = m * &self.inv;
        let rows = m.nrows() as f64;
        (v.transpose() * &v + &self.inv * rows) * (self.beta / scale)
    }
}

pub fn gauss_mean(y: &DVector<f64>, q: &DMatrix<f64>, beta: f64) -> Result<DVector<f64>> {
    check_finite("gauss_mean", y.as_slice())?;
    check_square(q, y.len())?;
    Ok(GaussTilt::new(q, beta)?.mean(y))
}

pub fn gauss_second(y: &DVector<f64>, q: &DMatrix<f64>, beta: f64) -> Result<DMatrix<f64>> {
    check_finite("gauss_second", y.as_slice())?;
    check_square(q, y.len())?;
    Ok(GaussTilt::new(q, beta)?.second(y))
}

pub fn gauss_log_partition(m: &DVector<f64>, q: &DMatrix<f64>) -> Result<f64> {
    check_finite("gauss_log_partition", m.as_slice())?;
    check_square(q, m.len())?;
    Ok(GaussTilt::new(q, 1.0)?.log_partition(m))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TiltedDirichletMoments {
    /// `F̃ = sqrt(beta) E[w]`.
    pub mean: DVector<f64>,
    /// `G̃ = beta E[w wᵀ]`.
    pub second: DMatrix<f64>,
    /// `phi~`, the log normalizer relative to the untilted prior.
    pub log_partition: f64,
}

/// Raw (unscaled) moments of the tilted Dirichlet law.
#[derive(Debug, Clone)]
pub struct RawMoments {
    pub mean: Vec<f64>,
    pub second: Vec<f64>,
    pub log_partition: f64,
}

/// Dirichlet tilt with a fixed quadratic part `Q̃`, shared across rows.
pub struct DirichletTilt<'a> {
    rule: &'a SimplexRule,
    base: Vec<f64>,
    pub beta: f64,
}

impl<'a> DirichletTilt<'a> {
    pub fn new(rule: &'a SimplexRule, qtilde: &DMatrix<f64>, beta: f64) -> Result<Self> {
        let k = rule.k;
        check_square(qtilde, k)?;
        check_finite("dirichlet tilt", qtilde.as_slice())?;
        let base = (0..rule.len())
            .map(|j| {
                let w = rule.point(j);
                let mut quad = 0.0;
                for a in 0..k {
                    for b in 0..k {
                        quad += w[a] * qtilde[(a, b)] * w[b];
                    }
                }
                rule.log_weights[j] - 0.5 * quad
            })
            .collect();
        Ok(DirichletTilt { rule, base, beta })
    }

    pub fn k(&self) -> usize {
        self.rule.k
    }

    fn exponents(&self, y: &[f64], buf: &mut Vec<f64>) -> f64 {
        let k = self.rule.k;
        buf.clear();
        let mut mx = f64::NEG_INFINITY;
        for (j, b) in self.base.iter().enumerate() {
            let w = &self.rule.points[j * k..(j + 1) * k];
            let mut e = *b;
            for c in 0..k {
                e += y[c] * w[c];
            }
            if e > mx {
                mx = e;
            }
            buf.push(e);
        }
        mx
    }

    /// Raw moments `E[w]`, optionally `E[w wᵀ]` (row-major), and `phi~`.
    pub fn raw(&self, y: &[f64], with_second: bool) -> RawMoments {
        let k = self.rule.k;
        let mut buf = Vec::with_capacity(self.base.len());
        let mx = self.exponents(y, &mut buf);
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; k];
        let mut s2 = vec![0.0; if with_second { k * k } else { 0 }];
        for (j, e) in buf.iter().enumerate() {
            let p = (e - mx).exp();
            let w = &self.rule.points[j * k..(j + 1) * k];
            s0 += p;
            for a in 0..k {
                let pw = p * w[a];
                s1[a] += pw;
                if with_second {
                    for b in a..k {
                        s2[a * k + b] += pw * w[b];
                    }
                }
            }
        }
        for v in s1.iter_mut() {
            *v /= s0;
        }
        if with_second {
            for a in 0..k {
                for b in a..k {
                    let v = s2[a * k + b] / s0;
                    s2[a * k + b] = v;
                    s2[b * k + a] = v;
                }
            }
        }
        RawMoments { mean: s1, second: s2, log_partition: mx + s0.ln() }
    }

    pub fn moments(&self, y: &[f64]) -> TiltedDirichletMoments {
        let k = self.rule.k;
        let raw = self.raw(y, true);
        TiltedDirichletMoments {
            mean: DVector::from_vec(raw.mean) * self.beta.sqrt(),
            second: DMatrix::from_row_slice(k, k, &raw.second) * self.beta,
            log_partition: raw.log_partition,
        }
    }

    pub fn log_partition(&self, y: &[f64]) -> f64 {
        let mut buf = Vec::with_capacity(self.base.len());
        let mx = self.exponents(y, &mut buf);
        mx + buf.iter().map(|e| (e - mx).exp()).sum::<f64>().ln()
    }
}

/// Per-row results of the Dirichlet moment map over a block of tilts.
#[derive(Debug, Clone)]
pub struct RowMoments {
    /// rows × k matrix of raw means `E[w]`.
    pub mean: DMatrix<f64>,
    /// `Σ_a E[w wᵀ]` over rows.
    pub second_sum: DMatrix<f64>,
    /// `Σ_a E[w]E[w]ᵀ` over rows.
    pub outer_sum: DMatrix<f64>,
    /// Per-row log normalizers.
    pub log_partition: Vec<f64>,
}

const ROW_CHUNK: usize = 32;

/// Applies the Dirichlet moment map to every row of `m` (rows × k). Work is
/// split into fixed-size chunks whose partial sums are combined in chunk
/// order, so the result does not depend on the number of threads.
pub fn dirichlet_rows(tilt: &DirichletTilt<'_>, m: &DMatrix<f64>) -> Result<RowMoments> {
    use rayon::prelude::*;
    let k = tilt.k();
    if m.ncols() != k {
        return Err(Error::Dimension(format!("tilt rows have {} columns, expected {k}", m.ncols())));
    }
    check_finite("dirichlet_rows", m.as_slice())?;
    let rows = m.nrows();
    let chunks: Vec<(usize, usize)> =
        (0..rows).step_by(ROW_CHUNK).map(|s| (s, (s + ROW_CHUNK).min(rows))).collect();
    let parts: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> = chunks
        .par_iter()
        .map(|&(s, e)| {
            let mut means = Vec::with_capacity((e - s) * k);
            let mut second = vec![0.0; k * k];
            let mut outer = vec![0.0; k * k];
            let mut logz = Vec::with_capacity(e - s);
            let mut y = vec![0.0; k];
            for a in s..e {
                for c in 0..k {
                    y[c] = m[(a, c)];
                }
                let raw = tilt.raw(&y, true);
                for i in 0..k * k {
                    second[i] += raw.second[i];
                }
                for i in 0..k {
                    for j in 0..k {
                        outer[i * k + j] += raw.mean[i] * raw.mean[j];
                    }
                }
                means.extend_from_slice(&raw.mean);
                logz.push(raw.log_partition);
            }
            (means, second, outer, logz)
        })
        .collect();
    let mut mean = DMatrix::zeros(rows, k);
    let mut second_sum = DMatrix::zeros(k, k);
    let mut outer_sum = DMatrix::zeros(k, k);
    let mut log_partition = Vec::with_capacity(rows);
    for ((s, e), (means, second, outer, logz)) in chunks.iter().zip(parts) {
        for a in *s..*e {
            for c in 0..k {
                mean[(a, c)] = means[(a - s) * k + c];
            }
        }
        second_sum += DMatrix::from_row_slice(k, k, &second);
        outer_sum += DMatrix::from_row_slice(k, k, &outer);
        log_partition.extend(logz);
    }
    Ok(RowMoments { mean, second_sum, outer_sum, log_partition })
}

fn raw_distance(a: &RawMoments, b: &RawMoments) -> f64 {
    let dm = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let ds = a.second.iter().zip(&b.second).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.mean.iter().cloned().fold(0.0, f64::max).max(1e-300);
    let dl = (a.log_partition - b.log_partition).abs() / a.log_partition.abs().max(1.0);
    (dm / scale).max(ds / (scale * scale)).max(dl)
}

const MAX_REFINEMENTS: usize = 3;

/// Evaluates raw moments with `spec`, refining the grid until two successive
/// resolutions agree to `spec.tolerance`.
fn refined_raw(
    k: usize,
    nu: f64,
    qtilde: &DMatrix<f64>,
    y: &[f64],
    spec: &QuadratureSpec,
) -> Result<RawMoments> {
    let rule = quadrature::rule(k, nu, spec)?;
    let mut prev = DirichletTilt::new(&rule, qtilde, 1.0)?.raw(y, true);
    if spec.scheme == Scheme::MonteCarlo {
        return Ok(prev);
    }
    let mut cur_spec = *spec;
    let mut achieved = f64::INFINITY;
    for _ in 0..MAX_REFINEMENTS {
        cur_spec = cur_spec.refined();
        let rule = match quadrature::rule(k, nu, &cur_spec) {
            Ok(r) => r,
            Err(_) => break,
        };
        let next = DirichletTilt::new(&rule, qtilde, 1.0)?.raw(y, true);
        achieved = raw_distance(&next, &prev);
        if achieved <= spec.tolerance {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::Quadrature { tolerance: spec.tolerance, achieved })
}

/// Moments of `exp(<ỹ,w> - <w,Q̃w>/2) Dir(nu;k)`: mean scaled by `sqrt(beta)`,
/// second moment by `beta`, and the log normalizer.
pub fn dir_moments(
    ytilde: &DVector<f64>,
    qtilde: &DMatrix<f64>,
    beta: f64,
    nu: f64,
    quad: &QuadratureSpec,
) -> Result<TiltedDirichletMoments> {
    let k = ytilde.len();
    check_finite("dir_moments", ytilde.as_slice())?;
    check_finite("dir_moments", qtilde.as_slice())?;
    check_square(qtilde, k)?;
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::InvalidParam(format!("beta must be >= 0, got {beta}")));
    }
    let raw = refined_raw(k, nu, qtilde, ytilde.as_slice(), quad)?;
    Ok(TiltedDirichletMoments {
        mean: DVector::from_vec(raw.mean) * beta.sqrt(),
        second: DMatrix::from_row_slice(k, k, &raw.second) * beta,
        log_partition: raw.log_partition,
    })
}

/// `E(q;nu) = ∫ w_1² e^{-q‖w‖²} Dir(dw) / ∫ e^{-q‖w‖²} Dir(dw)`.
pub fn e_func(q: f64, nu: f64, k: usize, quad: &QuadratureSpec) -> Result<f64> {
    if !(q >= 0.0) || !q.is_finite() {
        return Err(Error::InvalidParam(format!("q must be >= 0, got {q}")));
    }
    let qt = DMatrix::identity(k, k) * (2.0 * q);
    let raw = refined_raw(k, nu, &qt, &vec![0.0; k], quad)?;
    Ok(raw.second[0])
}

/// `E(q;nu)` on an already built rule, without refinement.
pub fn e_func_rule(q: f64, rule: &SimplexRule) -> f64 {
    let k = rule.k;
    let qt = DMatrix::identity(k, k) * (2.0 * q);
    let tilt = DirichletTilt::new(rule, &qt, 1.0).expect("finite tilt");
    tilt.raw(&vec![0.0; k], true).second[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gaussian_closed_forms() {
        let y = DVector::from_vec(vec![1.0, 1.0]);
        let q = DMatrix::from_element(2, 2, 0.5);
        let f = gauss_mean(&y, &q, 4.0).unwrap();
        assert_abs_diff_eq!(f, DVector::from_vec(vec![1.0, 1.0]), epsilon = 1e-14);
        let g = gauss_second(&DVector::zeros(3), &DMatrix::zeros(3, 3), 2.0).unwrap();
        assert_abs_diff_eq!(g, DMatrix::identity(3, 3) * 2.0, epsilon = 1e-14);
        let m = DVector::from_vec(vec![0.3, -1.2]);
        assert_abs_diff_eq!(gauss_log_partition(&m, &DMatrix::zeros(2, 2)).unwrap(), m.norm_squared() / 2.0);
    }

    #[test]
    fn invalid_tilt_rejected() {
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.0]);
        assert!(gauss_mean(&DVector::zeros(2), &q, 1.0).is_err());
        let y = DVector::from_vec(vec![f64::NAN, 0.0]);
        assert!(dir_moments(&y, &DMatrix::zeros(2, 2), 1.0, 1.0, &QuadratureSpec::grid(64)).is_err());
    }

    #[test]
    fn e_at_zero() {
        let e = e_func(0.0, 1.0, 2, &QuadratureSpec::grid(512)).unwrap();
        assert_abs_diff_eq!(e, 1.0 / 3.0, epsilon = 1e-12);
        let e = e_func(0.0, 2.0, 3, &QuadratureSpec::grid(64)).unwrap();
        assert_abs_diff_eq!(e, 3.0 / 21.0, epsilon = 1e-10);
    }
}
