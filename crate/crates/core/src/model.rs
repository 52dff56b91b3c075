//! Domain types for masked multi-modality data and fitted model parameters.
//!
//! Features are rows and samples are columns. Modalities are stacked along the
//! feature axis in the order recorded by [`ModalityLayout`].

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{GpccaError, Result};
use crate::linalg::BlockSpd;

/// Feature counts of the stacked modalities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModalityLayout {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl ModalityLayout {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(GpccaError::invalid(format!(
                "R ≥ 2 required, got {} modality",
                sizes.len()
            )));
        }
        if let Some(r) = sizes.iter().position(|&s| s == 0) {
            return Err(GpccaError::invalid(format!("modality {} is empty", r + 1)));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &s in &sizes {
            offsets.push(acc);
            acc += s;
        }
        Ok(Self { sizes, offsets })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Number of modalities R.
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    /// Total feature count m.
    pub fn total(&self) -> usize {
        self.offsets.last().unwrap() + self.sizes.last().unwrap()
    }

    pub fn min_size(&self) -> usize {
        *self.sizes.iter().min().unwrap()
    }

    /// Row range of modality `r` in the stacked feature axis.
    pub fn range(&self, r: usize) -> Range<usize> {
        self.offsets[r]..self.offsets[r] + self.sizes[r]
    }

    /// Modality owning stacked feature `i`.
    pub fn block_of(&self, i: usize) -> usize {
        match self.offsets.binary_search(&i) {
            Ok(r) => r,
            Err(r) => r - 1,
        }
    }
}

/// A validated m×n data matrix with its observation mask.
///
/// Entries at unobserved positions are stored as 0 and must never be read as
/// data; every algorithm consults the mask.
#[derive(Debug, Clone)]
pub struct ObservedDataset {
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
    layout: ModalityLayout,
    // missing[k][r]: local indices (within modality r) unobserved in sample k
    missing: Vec<Vec<Vec<usize>>>,
    observed_counts: Vec<usize>,
    complete: bool,
}

/// Builds a dataset from stacked values and mask, normalizing masked entries to 0.
pub fn validate_dataset(
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
    layout: ModalityLayout,
) -> Result<ObservedDataset> {
    let (m, n) = values.shape();
    if mask.shape() != (m, n) {
        return Err(GpccaError::invalid(format!(
            "mask shape {:?} does not match values shape {:?}",
            mask.shape(),
            (m, n)
        )));
    }
    if layout.total() != m {
        return Err(GpccaError::invalid(format!(
            "layout covers {} features but values have {m} rows",
            layout.total()
        )));
    }
    if n < 2 {
        return Err(GpccaError::invalid(format!(
            "at least 2 samples required, got {n}"
        )));
    }
    let mut values = values;
    for k in 0..n {
        for i in 0..m {
            if mask[(i, k)] {
                if !values[(i, k)].is_finite() {
                    return Err(GpccaError::invalid(format!(
                        "non-finite observed value at feature {}, sample {}",
                        i + 1,
                        k + 1
                    )));
                }
            } else {
                values[(i, k)] = 0.0;
            }
        }
    }

    let mut observed_counts = Vec::with_capacity(n);
    let mut missing = Vec::with_capacity(n);
    for k in 0..n {
        let col = mask.column(k);
        let count = col.iter().filter(|&&o| o).count();
        if count == 0 {
            return Err(GpccaError::invalid(format!(
                "sample {} has no observed entries",
                k + 1
            )));
        }
        observed_counts.push(count);
        let per_block = (0..layout.count())
            .map(|r| {
                layout
                    .range(r)
                    .filter(|&i| !col[i])
                    .map(|i| i - layout.offsets()[r])
                    .collect()
            })
            .collect();
        missing.push(per_block);
    }
    for i in 0..m {
        let count = mask.row(i).iter().filter(|&&o| o).count();
        if count == 0 {
            return Err(GpccaError::invalid(format!(
                "feature {} has no observed entries",
                i + 1
            )));
        }
        if count < 2 {
            return Err(GpccaError::invalid(format!(
                "feature {} is observed in fewer than 2 samples",
                i + 1
            )));
        }
    }
    let complete = observed_counts.iter().all(|&c| c == m);
    Ok(ObservedDataset {
        values,
        mask,
        layout,
        missing,
        observed_counts,
        complete,
    })
}

/// Row-concatenates per-modality blocks (each m_r×n) into one dataset.
pub fn stack_modalities(blocks: &[DMatrix<f64>], masks: &[DMatrix<bool>]) -> Result<ObservedDataset> {
    if blocks.len() < 2 {
        return Err(GpccaError::invalid("R ≥ 2 required"));
    }
    if masks.len() != blocks.len() {
        return Err(GpccaError::invalid(format!(
            "{} blocks but {} masks",
            blocks.len(),
            masks.len()
        )));
    }
    let n = blocks[0].ncols();
    for (r, (b, mk)) in blocks.iter().zip(masks).enumerate() {
        if b.ncols() != n {
            return Err(GpccaError::invalid(format!(
                "sample count mismatch: modality 1 has {n} samples, modality {} has {}",
                r + 1,
                b.ncols()
            )));
        }
        if mk.shape() != b.shape() {
            return Err(GpccaError::invalid(format!(
                "modality {}: mask shape {:?} does not match block shape {:?}",
                r + 1,
                mk.shape(),
                b.shape()
            )));
        }
    }
    let layout = ModalityLayout::new(blocks.iter().map(|b| b.nrows()).collect())?;
    let m = layout.total();
    let mut values = DMatrix::zeros(m, n);
    let mut mask = DMatrix::from_element(m, n, false);
    for (r, (b, mk)) in blocks.iter().zip(masks).enumerate() {
        let off = layout.offsets()[r];
        values.rows_mut(off, b.nrows()).copy_from(b);
        mask.rows_mut(off, b.nrows()).copy_from(mk);
    }
    validate_dataset(values, mask, layout)
}

impl ObservedDataset {
    /// Fully observed dataset.
    pub fn complete(values: DMatrix<f64>, layout: ModalityLayout) -> Result<Self> {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        validate_dataset(values, mask, layout)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn layout(&self) -> &ModalityLayout {
        &self.layout
    }

    pub fn n_samples(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_features(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_observed(&self, i: usize, k: usize) -> bool {
        self.mask[(i, k)]
    }

    /// m_(k): number of observed entries of sample `k`.
    pub fn observed_count(&self, k: usize) -> usize {
        self.observed_counts[k]
    }

    /// Local (within-modality) indices of the unobserved entries of sample `k` in modality `r`.
    pub fn missing_in_block(&self, k: usize, r: usize) -> &[usize] {
        &self.missing[k][r]
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    pub fn missing_fraction(&self) -> f64 {
        let total = (self.n_features() * self.n_samples()) as f64;
        let observed: usize = self.observed_counts.iter().sum();
        1.0 - observed as f64 / total
    }

    /// Per-modality (values, mask) blocks, inverse of [`stack_modalities`].
    pub fn split(&self) -> Vec<(DMatrix<f64>, DMatrix<bool>)> {
        (0..self.layout.count())
            .map(|r| {
                let range = self.layout.range(r);
                (
                    self.values.rows(range.start, range.len()).into_owned(),
                    self.mask.rows(range.start, range.len()).into_owned(),
                )
            })
            .collect()
    }

    /// Reorders samples so that new column `j` is old column `perm[j]`.
    pub fn permute_samples(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_samples();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(GpccaError::invalid("not a permutation of the sample indices"));
        }
        let values = self.values.select_columns(perm);
        let mask = self.mask.select_columns(perm);
        validate_dataset(values, mask, self.layout.clone())
    }

    /// Observed mean and population variance of each feature.
    pub fn feature_moments(&self) -> (DVector<f64>, DVector<f64>) {
        let m = self.n_features();
        let mut mean = DVector::zeros(m);
        let mut var = DVector::zeros(m);
        for i in 0..m {
            let (mut s, mut c) = (0.0, 0usize);
            for k in 0..self.n_samples() {
                if self.mask[(i, k)] {
                    s += self.values[(i, k)];
                    c += 1;
                }
            }
            let mu = s / c as f64;
            let mut ss = 0.0;
            for k in 0..self.n_samples() {
                if self.mask[(i, k)] {
                    ss += (self.values[(i, k)] - mu).powi(2);
                }
            }
            mean[i] = mu;
            var[i] = ss / c as f64;
        }
        (mean, var)
    }
}

/// Parameters of the fitted model: x = W z + μ + ε, z ~ N(0, I), ε ~ N(0, Ψ).
#[derive(Debug, Clone)]
pub struct ModelParams {
    loadings: DMatrix<f64>,
    means: DVector<f64>,
    psi: BlockSpd,
    layout: ModalityLayout,
    ridge: f64,
}

impl ModelParams {
    pub fn new(
        loadings: DMatrix<f64>,
        means: DVector<f64>,
        psi: BlockSpd,
        layout: ModalityLayout,
        ridge: f64,
    ) -> Result<Self> {
        let m = layout.total();
        let d = loadings.ncols();
        if d < 1 {
            return Err(GpccaError::invalid("d must be ≥ 1"));
        }
        if d > layout.min_size() {
            return Err(GpccaError::invalid(format!(
                "d = {d} exceeds the smallest modality size {}",
                layout.min_size()
            )));
        }
        if loadings.nrows() != m || means.len() != m {
            return Err(GpccaError::invalid(format!(
                "parameter shapes W {:?}, μ {} do not match m = {m}",
                loadings.shape(),
                means.len()
            )));
        }
        if psi.sizes() != layout.sizes() {
            return Err(GpccaError::invalid(format!(
                "Ψ block sizes {:?} do not match layout {:?}",
                psi.sizes(),
                layout.sizes()
            )));
        }
        check_ridge(ridge)?;
        for (r, b) in psi.blocks().iter().enumerate() {
            let scale = b.amax().max(1.0);
            if (b - b.transpose()).amax() > 1e-10 * scale {
                return Err(GpccaError::invalid(format!("Ψ block {} is not symmetric", r + 1)));
            }
        }
        if loadings.iter().chain(means.iter()).any(|v| !v.is_finite()) {
            return Err(GpccaError::degenerate("non-finite loadings or means"));
        }
        Ok(Self {
            loadings,
            means,
            psi,
            layout,
            ridge,
        })
    }

    pub fn loadings(&self) -> &DMatrix<f64> {
        &self.loadings
    }

    pub fn means(&self) -> &DVector<f64> {
        &self.means
    }

    pub fn psi(&self) -> &BlockSpd {
        &self.psi
    }

    pub fn layout(&self) -> &ModalityLayout {
        &self.layout
    }

    pub fn latent_dim(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Marginal covariance W Wᵀ + Ψ, assembled densely. Only for small problems and tests.
    pub fn marginal_covariance(&self) -> DMatrix<f64> {
        &self.loadings * self.loadings.transpose() + self.psi.to_dense()
    }
}

pub(crate) fn check_ridge(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(GpccaError::invalid(format!("λ must lie in (0, 1], got {lambda}")));
    }
    Ok(())
}

/// Posterior summaries of the latent factors, one column / matrix per sample.
#[derive(Debug, Clone)]
pub struct LatentPosterior {
    /// d×n; column k is E(z_k | observed part of x_k).
    pub means: DMatrix<f64>,
    /// Posterior covariance M̃_k of each z_k.
    pub covariances: Vec<DMatrix<f64>>,
}

/// Outcome of an EM run.
#[derive(Debug, Clone)]
pub struct FitReport {
    /// Penalized observed-data log-likelihood, one value per evaluated parameter set.
    pub loglik_trace: Vec<f64>,
    /// The same trace without the ridge penalty term.
    pub unpenalized_trace: Vec<f64>,
    /// Number of M-steps performed.
    pub iterations: usize,
    pub converged: bool,
    pub final_params: ModelParams,
    pub posterior: LatentPosterior,
}

impl FitReport {
    pub fn final_loglik(&self) -> f64 {
        *self.loglik_trace.last().unwrap()
    }

    pub fn embeddings(&self) -> &DMatrix<f64> {
        &self.posterior.means
    }
}
