//! Synthetic instances: Gaussian-topic LDA and Z2 synchronization.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub k: usize,
    pub d: usize,
    pub n: usize,
    pub beta: f64,
    pub nu: f64,
}

impl ModelParams {
    pub fn new(k: usize, d: usize, n: usize, beta: f64, nu: f64) -> Result<Self> {
        let p = ModelParams { k, d, n, beta, nu };
        p.validate()?;
        Ok(p)
    }

    /// Builds parameters from an aspect ratio, with `n = round(delta * d)`.
    pub fn with_delta(k: usize, d: usize, delta: f64, beta: f64, nu: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParam(format!("delta must be positive, got {delta}")));
        }
        let n = (delta * d as f64).round().max(1.0) as usize;
        Self::new(k, d, n, beta, nu)
    }

    pub fn delta(&self) -> f64 {
        self.n as f64 / self.d as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidParam(format!("k must be at least 2, got {}", self.k)));
        }
        if self.d == 0 || self.n == 0 {
            return Err(Error::InvalidParam("n and d must be positive".into()));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidParam(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(Error::InvalidParam(format!("nu must be > 0, got {}", self.nu)));
        }
        Ok(())
    }

    pub(crate) fn check_x(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.n || x.ncols() != self.d {
            return Err(Error::Dimension(format!(
                "X is {}x{}, expected {}x{}",
                x.nrows(),
                x.ncols(),
                self.n,
                self.d
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// n×d observations.
    pub x: DMatrix<f64>,
    /// n×k weights, rows on the simplex.
    pub w: DMatrix<f64>,
    /// d×k topics.
    pub h: DMatrix<f64>,
}

/// Draws one Dir(nu; k) vector by normalizing Gamma(nu, 1) variates.
pub fn sample_dirichlet<R: Rng>(r: &mut R, k: usize, nu: f64, out: &mut [f64]) {
    let gamma = Gamma::new(nu, 1.0).expect("nu > 0");
    loop {
        let mut s = 0.0;
        for v in out.iter_mut().take(k) {
            *v = gamma.sample(r);
            s += *v;
        }
        if s > 0.0 {
            for v in out.iter_mut().take(k) {
                *v /= s;
            }
            return;
        }
    }
}

pub fn sample_lda(params: &ModelParams, seed: u64) -> Result<Dataset> {
    params.validate()?;
    let ModelParams { k, d, n, beta, nu } = *params;
    let mut r = rng::stream(seed, rng::STREAM_MODEL);
    let mut w = DMatrix::zeros(n, k);
    let mut row = vec![0.0; k];
    for a in 0..n {
        sample_dirichlet(&mut r, k, nu, &mut row);
        for j in 0..k {
            w[(a, j)] = row[j];
        }
    }
    let h = DMatrix::from_fn(d, k, |_, _| r.sample::<f64, _>(StandardNormal));
    let noise = Normal::new(0.0, (1.0 / d as f64).sqrt()).expect("finite sd");
    let mut x = DMatrix::from_fn(n, d, |_, _| noise.sample(&mut r));
    x.gemm(beta.sqrt() / d as f64, &w, &h.transpose(), 1.0);
    Ok(Dataset { x, w, h })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Z2Instance {
    pub x: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub lambda: f64,
}

impl Z2Instance {
    pub fn n(&self) -> usize {
        self.sigma.len()
    }

    /// The observation with its diagonal set to zero.
    pub fn x0(&self) -> DMatrix<f64> {
        let mut x0 = self.x.clone();
        x0.fill_diagonal(0.0);
        x0
    }
}

pub fn sample_z2(n: usize, lambda: f64, seed: u64) -> Result<Z2Instance> {
    if n == 0 {
        return Err(Error::InvalidParam("n must be positive".into()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParam(format!("lambda must be >= 0, got {lambda}")));
    }
    let mut r = rng::stream(seed, rng::STREAM_MODEL);
    let sigma = DVector::from_fn(n, |_, _| if r.random::<bool>() { 1.0 } else { -1.0 });
    let nf = n as f64;
    let off = (1.0 / nf).sqrt();
    let diag = (2.0 / nf).sqrt();
    let mut x = DMatrix::zeros(n, n);
    for i in 0..n {
        let z: f64 = r.sample(StandardNormal);
        x[(i, i)] = diag * z + lambda / nf;
        for j in (i + 1)..n {
            let z: f64 = r.sample(StandardNormal);
            let v = off * z + lambda / nf * sigma[i] * sigma[j];
            x[(i, j)] = v;
            x[(j, i)] = v;
        }
    }
    Ok(Z2Instance { x, sigma, lambda })
}

/// Constant of the rank-one baseline estimator.
pub fn trivial_constant(params: &ModelParams) -> f64 {
    params.beta.sqrt() / (params.k as f64 + params.beta * params.delta())
}

/// The estimator `c 1_n (Xᵀ1_n)ᵀ` of the signal matrix.
pub fn trivial_estimator(x: &DMatrix<f64>, params: &ModelParams) -> Result<DMatrix<f64>> {
    params.check_x(x)?;
    let c = trivial_constant(params);
    let colsum = x.row_sum();
    Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |_, j| c * colsum[j]))
}

const MAGIC: &[u8; 4] = b"MFL1";

impl Dataset {
    pub fn k(&self) -> usize {
        self.w.ncols()
    }

    /// Writes `X` as CSV with header `i,j,value`, row-major.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["i", "j", "value"])?;
        for i in 0..self.x.nrows() {
            for j in 0..self.x.ncols() {
                wtr.write_record(&[i.to_string(), j.to_string(), format!("{:e}", self.x[(i, j)])])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Binary dump: magic, u32 n, d, k, then X, W, H row-major as little-endian f64.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let (n, d, k) = (self.x.nrows(), self.x.ncols(), self.k());
        out.write_all(MAGIC)?;
        for v in [n, d, k] {
            let v = u32::try_from(v).map_err(|_| Error::InvalidParam("dimension exceeds u32".into()))?;
            out.write_all(&v.to_le_bytes())?;
        }
        for m in [&self.x, &self.w, &self.h] {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    out.write_all(&m[(i, j)].to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut inp: R) -> Result<Self> {
        let mut head = [0u8; 16];
        inp.read_exact(&mut head)?;
        if &head[0..4] != MAGIC {
            return Err(Error::InvalidParam("bad magic in dataset file".into()));
        }
        let dim = |o: usize| u32::from_le_bytes(head[o..o + 4].try_into().unwrap()) as usize;
        let (n, d, k) = (dim(4), dim(8), dim(12));
        let mut read = |r: usize, c: usize| -> Result<DMatrix<f64>> {
            let mut buf = vec![0u8; r * c * 8];
            inp.read_exact(&mut buf)?;
            Ok(DMatrix::from_row_iterator(
                r,
                c,
                buf.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())),
            ))
        };
        let x = read(n, d)?;
        let w = read(n, k)?;
        let h = read(d, k)?;
        Ok(Dataset { x, w, h })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_rounds_n() {
        let p = ModelParams::with_delta(2, 400, 0.5, 1.0, 1.0).unwrap();
        assert_eq!(p.n, 200);
        assert_eq!(p.delta(), 0.5);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(ModelParams::new(1, 10, 10, 1.0, 1.0).is_err());
        assert!(ModelParams::new(2, 10, 10, -1.0, 1.0).is_err());
        assert!(ModelParams::new(2, 10, 10, 1.0, 0.0).is_err());
    }

    #[test]
    fn binary_roundtrip() {
        let p = ModelParams::new(3, 7, 5, 2.0, 0.5).unwrap();
        let ds = sample_lda(&p, 9).unwrap();
        let mut buf = Vec::new();
        ds.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 8 * (5 * 7 + 5 * 3 + 7 * 3));
        let back = Dataset::read_binary(&buf[..]).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn z2_diagonal_and_symmetry() {
        let inst = sample_z2(50, 1.0, 3).unwrap();
        assert_eq!(inst.x, inst.x.transpose());
        assert!(inst.x0().diagonal().iter().all(|&v| v == 0.0));
    }
}
