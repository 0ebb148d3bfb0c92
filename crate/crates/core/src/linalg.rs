//! Dense linear-algebra helpers over `ndarray` matrices.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Relative cutoff below which a singular value does not count toward rank.
pub const RANK_TOLERANCE: f64 = 1e-8;

/// Thin SVD `a = u · diag(s) · vt` with singular values in descending order.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Array2<f64>,
    pub s: Array1<f64>,
    pub vt: Array2<f64>,
}

impl Svd {
    pub fn new(a: &Array2<f64>) -> Result<Self> {
        let (m, n) = a.dim();
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Svd("matrix has non-finite entries".into()));
        }
        if m == 0 || n == 0 {
            return Err(Error::Svd("empty matrix".into()));
        }
        let dense = DMatrix::from_fn(m, n, |i, j| a[[i, j]]);
        let svd = dense
            .try_svd(true, true, f64::EPSILON, 10_000)
            .ok_or_else(|| Error::Svd(format!("no convergence on {m}x{n} matrix")))?;
        let (u, vt) = match (svd.u, svd.v_t) {
            (Some(u), Some(vt)) => (u, vt),
            _ => return Err(Error::Svd("factors were not computed".into())),
        };
        let k = svd.singular_values.len();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
        let s = Array1::from_shape_fn(k, |r| svd.singular_values[order[r]]);
        let u = Array2::from_shape_fn((m, k), |(i, r)| u[(i, order[r])]);
        let vt = Array2::from_shape_fn((k, n), |(r, j)| vt[(order[r], j)]);
        Ok(Svd { u, s, vt })
    }

    /// Reassembles `u · diag(s) · vt` using the given singular values.
    pub fn compose(&self, s: &Array1<f64>) -> Array2<f64> {
        let scaled = &self.u * s;
        scaled.dot(&self.vt)
    }

    pub fn rank(&self) -> usize {
        rank_of_singular_values(&self.s)
    }
}

pub fn rank_of_singular_values(s: &Array1<f64>) -> usize {
    let max = s.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > RANK_TOLERANCE * max).count()
}

/// Numerical rank: singular values above `RANK_TOLERANCE · σ_max`.
pub fn numerical_rank(a: &Array2<f64>) -> Result<usize> {
    if a.iter().all(|&v| v == 0.0) {
        return Ok(0);
    }
    Ok(Svd::new(a)?.rank())
}

pub fn frobenius_norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn nuclear_norm(a: &Array2<f64>) -> Result<f64> {
    if a.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    Ok(Svd::new(a)?.s.sum())
}
