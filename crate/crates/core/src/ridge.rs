//! Ridge shrinkage of the error correlation / covariance and its penalty term.
//!
//! Ψ factors as Ψ_d^{1/2} R Ψ_d^{1/2} with Ψ_d = diag(Ψ) and R unit-diagonal.
//! Shrinking R toward the identity with weight λ is equivalent to inflating the
//! diagonal of Ψ by 1/λ while leaving the off-diagonal entries alone.

use nalgebra::{DMatrix, DVector};

use crate::error::{GpccaError, Result};
use crate::linalg::BlockSpd;
use crate::model::check_ridge;

/// Ridge weight λ together with the penalty constant c = n(1 − λ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeSpec {
    lambda: f64,
    n: usize,
}

impl RidgeSpec {
    pub fn new(lambda: f64, n: usize) -> Result<Self> {
        check_ridge(lambda)?;
        if n == 0 {
            return Err(GpccaError::invalid("sample count must be positive"));
        }
        Ok(Self { lambda, n })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn c(&self) -> f64 {
        self.n as f64 * (1.0 - self.lambda)
    }
}

/// Splits Ψ into its diagonal Ψ_d and block correlation matrix R.
pub fn correlation_decompose(psi: &BlockSpd) -> Result<(DVector<f64>, BlockSpd)> {
    let diag = DVector::from_vec(psi.diagonal());
    if let Some(i) = diag.iter().position(|&v| !(v > 0.0)) {
        return Err(GpccaError::invalid(format!(
            "non-positive diagonal entry {} at position {}",
            diag[i],
            i + 1
        )));
    }
    let blocks = psi
        .blocks()
        .iter()
        .zip(psi.offsets())
        .map(|(b, &off)| {
            let s = b.nrows();
            let mut r = DMatrix::from_fn(s, s, |i, j| {
                b[(i, j)] / (diag[off + i] * diag[off + j]).sqrt()
            });
            r.fill_diagonal(1.0);
            r
        })
        .collect();
    Ok((diag, BlockSpd::new(blocks)?))
}

/// R̂_ridge = λR̂ + (1 − λ)I for a unit-diagonal symmetric R̂.
pub fn ridge_correlation(r_hat: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    check_ridge(lambda)?;
    if !r_hat.is_square() {
        return Err(GpccaError::invalid("correlation matrix must be square"));
    }
    if r_hat.diagonal().iter().any(|&v| (v - 1.0).abs() > 1e-10) {
        return Err(GpccaError::invalid("correlation matrix must have unit diagonal"));
    }
    if (r_hat - r_hat.transpose()).amax() > 1e-10 {
        return Err(GpccaError::invalid("correlation matrix must be symmetric"));
    }
    let mut out = r_hat * lambda;
    out.fill_diagonal(1.0);
    Ok(out)
}

/// Ψ̂_ridge = Ψ̂ + (1/λ − 1)·Ψ̂_d: diagonal multiplied by 1/λ, off-diagonals unchanged.
pub fn ridge_covariance(psi_hat: &BlockSpd, lambda: f64) -> Result<BlockSpd> {
    check_ridge(lambda)?;
    let blocks = psi_hat
        .blocks()
        .iter()
        .map(|b| {
            let mut out = b.clone();
            inflate_diagonal(&mut out, lambda);
            out
        })
        .collect();
    BlockSpd::new(blocks)
}

pub(crate) fn inflate_diagonal(block: &mut DMatrix<f64>, lambda: f64) {
    if lambda == 1.0 {
        return;
    }
    let factor = 1.0 / lambda;
    for i in 0..block.nrows() {
        block[(i, i)] *= factor;
    }
}

/// −(c/2)·tr(R⁻¹) for a block correlation matrix R.
pub fn ridge_penalty(r: &BlockSpd, c: f64) -> f64 {
    if c == 0.0 {
        return 0.0;
    }
    let trace: f64 = r.inverse_blocks().iter().map(|inv| inv.trace()).sum();
    -0.5 * c * trace
}

/// tr(R⁻¹) of the correlation matrix of Ψ, computed as Σ_i Ψ_ii (Ψ⁻¹)_ii.
pub(crate) fn correlation_inverse_trace(psi: &BlockSpd, psi_inv: &[DMatrix<f64>]) -> f64 {
    psi.blocks()
        .iter()
        .zip(psi_inv)
        .map(|(b, inv)| {
            b.diagonal()
                .iter()
                .zip(inv.diagonal().iter())
                .map(|(a, p)| a * p)
                .sum::<f64>()
        })
        .sum()
}
