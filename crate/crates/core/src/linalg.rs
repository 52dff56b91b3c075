//! Block-diagonal SPD matrices and the dense primitives the EM engine is built on.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{GpccaError, Result};

/// Symmetric positive-definite block-diagonal matrix with cached Cholesky factors.
#[derive(Debug, Clone)]
pub struct BlockSpd {
    blocks: Vec<DMatrix<f64>>,
    factors: Vec<Cholesky<f64, Dyn>>,
    // blocks with all off-diagonal entries zero are solved by exact division
    diagonal: Vec<bool>,
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

fn is_diagonal(b: &DMatrix<f64>) -> bool {
    let n = b.nrows();
    (0..n).all(|j| (0..n).all(|i| i == j || b[(i, j)] == 0.0))
}

impl BlockSpd {
    /// Factorizes each block; fails with [`GpccaError::Degenerate`] if any block is not SPD.
    pub fn new(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        let mut factors = Vec::with_capacity(blocks.len());
        for (r, b) in blocks.iter().enumerate() {
            if !b.is_square() || b.nrows() == 0 {
                return Err(GpccaError::invalid(format!(
                    "block {} has shape {:?}",
                    r + 1,
                    b.shape()
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(GpccaError::degenerate(format!("block {} has non-finite entries", r + 1)));
            }
            let f = Cholesky::new(b.clone()).ok_or_else(|| {
                GpccaError::degenerate(format!("block {} is not positive definite", r + 1))
            })?;
            factors.push(f);
        }
        let sizes: Vec<usize> = blocks.iter().map(|b| b.nrows()).collect();
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &s in &sizes {
            offsets.push(acc);
            acc += s;
        }
        let diagonal = blocks.iter().map(is_diagonal).collect();
        Ok(Self {
            blocks,
            factors,
            diagonal,
            sizes,
            offsets,
        })
    }

    pub fn identity(sizes: &[usize]) -> Result<Self> {
        Self::new(sizes.iter().map(|&s| DMatrix::identity(s, s)).collect())
    }

    /// Diagonal matrix split into blocks of the given sizes.
    pub fn from_diagonal(sizes: &[usize], diag: &[f64]) -> Result<Self> {
        let total: usize = sizes.iter().sum();
        if diag.len() != total {
            return Err(GpccaError::invalid(format!(
                "diagonal has {} entries, blocks need {total}",
                diag.len()
            )));
        }
        let mut off = 0;
        let mut blocks = Vec::with_capacity(sizes.len());
        for &s in sizes {
            let mut b = DMatrix::zeros(s, s);
            for i in 0..s {
                b[(i, i)] = diag[off + i];
            }
            off += s;
            blocks.push(b);
        }
        Self::new(blocks)
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn block(&self, r: usize) -> &DMatrix<f64> {
        &self.blocks[r]
    }

    pub fn factor(&self, r: usize) -> &Cholesky<f64, Dyn> {
        &self.factors[r]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn dim(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .flat_map(|b| b.diagonal().iter().copied().collect::<Vec<_>>())
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        assemble_block_diag(&self.blocks)
    }

    /// Ψ⁻¹·rhs without forming Ψ⁻¹.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        block_solve(self, rhs)
    }

    /// Explicit inverse of each block.
    pub fn inverse_blocks(&self) -> Vec<DMatrix<f64>> {
        self.factors
            .iter()
            .zip(&self.blocks)
            .zip(&self.diagonal)
            .map(|((f, b), &diag)| {
                if diag {
                    DMatrix::from_diagonal(&b.diagonal().map(|v| 1.0 / v))
                } else {
                    f.inverse()
                }
            })
            .collect()
    }

    pub fn logdet(&self) -> f64 {
        block_logdet(self)
    }

    /// Restriction to the rows/columns flagged in `keep` (length = dim). Blocks left empty are dropped.
    pub fn restrict(&self, keep: &[bool]) -> Result<BlockSpd> {
        if keep.len() != self.dim() {
            return Err(GpccaError::invalid(format!(
                "restriction mask has {} entries for a {}-dimensional matrix",
                keep.len(),
                self.dim()
            )));
        }
        let mut blocks = Vec::new();
        for (r, b) in self.blocks.iter().enumerate() {
            let idx: Vec<usize> = (0..self.sizes[r])
                .filter(|&i| keep[self.offsets[r] + i])
                .collect();
            if idx.is_empty() {
                continue;
            }
            blocks.push(select_square(b, &idx));
        }
        if blocks.is_empty() {
            return Err(GpccaError::invalid("restriction keeps no rows"));
        }
        BlockSpd::new(blocks)
    }
}

/// Computes Ψ⁻¹·rhs block by block from the cached factors.
pub fn block_solve(psi: &BlockSpd, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if rhs.nrows() != psi.dim() {
        return Err(GpccaError::invalid(format!(
            "right-hand side has {} rows, Ψ has dimension {}",
            rhs.nrows(),
            psi.dim()
        )));
    }
    let mut out = DMatrix::zeros(rhs.nrows(), rhs.ncols());
    for (r, f) in psi.factors.iter().enumerate() {
        let (off, s) = (psi.offsets[r], psi.sizes[r]);
        let part = if psi.diagonal[r] {
            let d = psi.blocks[r].diagonal();
            let mut p = rhs.rows(off, s).into_owned();
            for (i, mut row) in p.row_iter_mut().enumerate() {
                row /= d[i];
            }
            p
        } else {
            f.solve(&rhs.rows(off, s).into_owned())
        };
        out.rows_mut(off, s).copy_from(&part);
    }
    Ok(out)
}

/// ln|Ψ| as the sum of block Cholesky log-determinants.
pub fn block_logdet(psi: &BlockSpd) -> f64 {
    psi.factors.iter().map(chol_logdet).sum()
}

pub(crate) fn chol_logdet(f: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * f.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Inverse and log-determinant of a small SPD matrix via an in-place Cholesky
/// factor. `None` if the matrix is not positive definite.
pub(crate) fn spd_inverse(mut a: DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let n = a.nrows();
    debug_assert!(a.is_square());
    let l = a.as_mut_slice();
    // Left-looking column Cholesky; only the lower triangle is referenced.
    for j in 0..n {
        for k in 0..j {
            let ljk = l[j + k * n];
            if ljk != 0.0 {
                let (head, tail) = l.split_at_mut(j * n);
                let src = &head[k * n + j..k * n + n];
                for (dst, &v) in tail[j..n].iter_mut().zip(src) {
                    *dst -= ljk * v;
                }
            }
        }
        let d = l[j + j * n];
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[j + j * n] = d;
        for v in &mut l[j * n + j + 1..(j + 1) * n] {
            *v /= d;
        }
    }
    let logdet = 2.0 * (0..n).map(|j| l[j + j * n].ln()).sum::<f64>();
    // X = L⁻¹, column by column by forward substitution.
    let mut x = vec![0.0; n * n];
    for j in 0..n {
        let col = &mut x[j * n..(j + 1) * n];
        col[j] = 1.0;
        for k in j..n {
            let v = col[k] / l[k + k * n];
            col[k] = v;
            if v != 0.0 {
                for (c, &lk) in col[k + 1..].iter_mut().zip(&l[k * n + k + 1..(k + 1) * n]) {
                    *c -= v * lk;
                }
            }
        }
    }
    // A⁻¹ = XᵀX; X lower triangular so (XᵀX)_ij = Σ_{k ≥ max(i,j)} X_ki X_kj.
    let mut inv = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let ci = &x[i * n + i..(i + 1) * n];
            let cj = &x[j * n + i..(j + 1) * n];
            let v: f64 = ci.iter().zip(cj).map(|(a, b)| a * b).sum();
            inv[(i, j)] = v;
            inv[(j, i)] = v;
        }
    }
    Some((inv, logdet))
}

/// Posterior matrix M = (I + W̃ᵀΨ̃⁻¹W̃)⁻¹ and the gain M·W̃ᵀ·Ψ̃⁻¹.
///
/// Returns `(M, gain)` with `gain` of shape d×m_(k).
pub fn woodbury_posterior(
    w_partial: &DMatrix<f64>,
    psi_partial: &BlockSpd,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = w_partial.ncols();
    if d == 0 {
        return Err(GpccaError::invalid("d must be ≥ 1"));
    }
    let psi_inv_w = block_solve(psi_partial, w_partial)?;
    let mut inner = w_partial.transpose() * &psi_inv_w;
    for j in 0..d {
        inner[(j, j)] += 1.0;
    }
    let chol = Cholesky::new(inner)
        .ok_or_else(|| GpccaError::degenerate("I + WᵀΨ⁻¹W is not positive definite"))?;
    let m = symmetrize(&chol.inverse());
    let gain = &m * psi_inv_w.transpose();
    Ok((m, gain))
}

/// Keeps the diagonal blocks of `g` with the given block sizes, symmetrized as (B + Bᵀ)/2.
///
/// Accepts any block partition, including a single block; pass `layout.sizes()` for a
/// [`ModalityLayout`](crate::model::ModalityLayout).
pub fn bdiag_project(g: &DMatrix<f64>, sizes: &[usize]) -> Result<Vec<DMatrix<f64>>> {
    let m: usize = sizes.iter().sum();
    if g.shape() != (m, m) {
        return Err(GpccaError::invalid(format!(
            "matrix shape {:?} does not match block total {m}",
            g.shape()
        )));
    }
    let mut off = 0;
    Ok(sizes
        .iter()
        .map(|&s| {
            let b = g.view((off, off), (s, s));
            off += s;
            (&b + b.transpose()) * 0.5
        })
        .collect())
}

pub fn assemble_block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let m: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(m, m);
    let mut off = 0;
    for b in blocks {
        let s = b.nrows();
        out.view_mut((off, off), (s, s)).copy_from(b);
        off += s;
    }
    out
}

pub(crate) fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub(crate) fn select_square(a: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| a[(idx[i], idx[j])])
}
