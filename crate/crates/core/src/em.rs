//! EM estimation with missing entries.
//!
//! The E-step never assembles an m×m covariance. For each modality the inverse of
//! the observed sub-block of Ψ is expressed through the precision P = Ψ⁻¹:
//!
//! ```text
//! pad(Ψ_oo⁻¹) = P − P[:, m] P_mm⁻¹ P[m, :]
//! ```
//!
//! so a sample with `u` unobserved features in a modality costs one u×u
//! factorization instead of one of size m_r − u. The conditional moments of the
//! unobserved entries follow from the same quantities: given the observed part,
//! x_m = W*_m z + shift + η with W*_m = P_mm⁻¹ (PW)_m and η ~ N(0, P_mm⁻¹).

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GpccaError, Result};
use crate::linalg::{chol_logdet, select_square, spd_inverse, symmetrize, BlockSpd};
use crate::model::{check_ridge, FitReport, LatentPosterior, ModelParams, ObservedDataset};
use crate::ridge::{correlation_inverse_trace, inflate_diagonal};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// Seeded Gaussian matrix with orthonormalized columns, rows scaled by feature std.
    #[default]
    RandomOrthonormal,
    /// Top-d principal directions of the mean-imputed, centered data.
    MeanImputedSvd,
}

/// Order of the parameter updates inside one M-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MStepOrder {
    /// μ, then W given the new μ, then Ψ given both. Each update maximizes the
    /// expected complete-data log-likelihood with the others fixed.
    #[default]
    Sequential,
    /// Every update uses the previous iterate's μ and W (literal transcription).
    Simultaneous,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iterations: usize,
    pub rel_tolerance: f64,
    pub ridge_lambda: f64,
    pub seed: u64,
    pub init_strategy: InitStrategy,
    pub m_step_order: MStepOrder,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            rel_tolerance: 1e-6,
            ridge_lambda: 0.5,
            seed: 0,
            init_strategy: InitStrategy::RandomOrthonormal,
            m_step_order: MStepOrder::Sequential,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        check_ridge(self.ridge_lambda)?;
        if !(self.rel_tolerance > 0.0) {
            return Err(GpccaError::invalid("rel_tolerance must be positive"));
        }
        if self.max_iterations < 1 {
            return Err(GpccaError::invalid("max_iterations must be ≥ 1"));
        }
        Ok(())
    }
}

/// Conditional moments of the unobserved entries of one sample within one modality.
#[derive(Debug, Clone)]
pub struct MissingBlock {
    pub block: usize,
    /// Stacked feature indices of the unobserved entries.
    pub rows: Vec<usize>,
    /// Effective loadings W*_m: E(x_m | z, x̃) = W*_m z + const.
    pub effective_loadings: DMatrix<f64>,
    /// Cov(x_m | x̃_k).
    pub covariance: DMatrix<f64>,
}

/// Per-sample conditional expectations produced by the E-step.
#[derive(Debug, Clone)]
pub struct EStepBuffers {
    latent_means: DMatrix<f64>,
    latent_covs: Vec<DMatrix<f64>>,
    completed: DMatrix<f64>,
    missing: Vec<Vec<MissingBlock>>,
    loglik: f64,
    penalty: f64,
}

impl EStepBuffers {
    pub fn n_samples(&self) -> usize {
        self.latent_means.ncols()
    }

    /// d×n matrix of E(z_k | x̃_k).
    pub fn latent_means(&self) -> &DMatrix<f64> {
        &self.latent_means
    }

    /// M̃_k.
    pub fn latent_cov(&self, k: usize) -> &DMatrix<f64> {
        &self.latent_covs[k]
    }

    /// E(z_k z_kᵀ | x̃_k) = M̃_k + E(z_k)E(z_k)ᵀ.
    pub fn latent_second_moment(&self, k: usize) -> DMatrix<f64> {
        let ez = self.latent_means.column(k);
        &self.latent_covs[k] + ez * ez.transpose()
    }

    /// m×n matrix of E(x_k | x̃_k); observed entries are the data themselves.
    pub fn completed(&self) -> &DMatrix<f64> {
        &self.completed
    }

    pub fn missing_blocks(&self, k: usize) -> &[MissingBlock] {
        &self.missing[k]
    }

    /// E(x_k z_kᵀ | x̃_k), m×d.
    pub fn cross_moment(&self, k: usize) -> DMatrix<f64> {
        let ez = self.latent_means.column(k);
        let mut out = self.completed.column(k) * ez.transpose();
        for mb in &self.missing[k] {
            let c = &mb.effective_loadings * &self.latent_covs[k];
            for (a, &i) in mb.rows.iter().enumerate() {
                for j in 0..out.ncols() {
                    out[(i, j)] += c[(a, j)];
                }
            }
        }
        out
    }

    /// Full E(x_k x_kᵀ | x̃_k), m×m. Intended for inspection and tests.
    pub fn second_moment(&self, k: usize) -> DMatrix<f64> {
        let ex = self.completed.column(k);
        let mut out = ex * ex.transpose();
        let mk = &self.latent_covs[k];
        let blocks = &self.missing[k];
        for (p, a) in blocks.iter().enumerate() {
            for (q, b) in blocks.iter().enumerate() {
                let cov = if p == q {
                    a.covariance.clone()
                } else {
                    &a.effective_loadings * mk * b.effective_loadings.transpose()
                };
                for (u, &i) in a.rows.iter().enumerate() {
                    for (v, &j) in b.rows.iter().enumerate() {
                        out[(i, j)] += cov[(u, v)];
                    }
                }
            }
        }
        out
    }

    /// Observed-data log-likelihood without the ridge penalty.
    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    /// The ridge penalty −(c/2)tr(R⁻¹) evaluated at the E-step parameters.
    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    pub fn penalized_loglik(&self) -> f64 {
        self.loglik + self.penalty
    }

    pub fn posterior(&self) -> LatentPosterior {
        LatentPosterior {
            means: self.latent_means.clone(),
            covariances: self.latent_covs.clone(),
        }
    }
}

/// Parameters of the starting point of EM.
pub fn init_params(data: &ObservedDataset, d: usize, config: &EmConfig) -> Result<ModelParams> {
    config.validate()?;
    let layout = data.layout();
    check_latent_dim(d, layout.min_size())?;
    let (mean, mut var) = data.feature_moments();
    for (i, v) in var.iter_mut().enumerate() {
        if *v < VARIANCE_FLOOR {
            log::warn!("feature {} has variance {v:.3e}; flooring at {VARIANCE_FLOOR}", i + 1);
            *v = VARIANCE_FLOOR;
        }
    }
    let m = data.n_features();
    let n = data.n_samples();
    let loadings = match config.init_strategy {
        InitStrategy::RandomOrthonormal => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let g = DMatrix::<f64>::from_fn(m, d, |_, _| StandardNormal.sample(&mut rng));
            let q = g.qr().q();
            DMatrix::from_fn(m, d, |i, j| q[(i, j)] * var[i].sqrt())
        }
        InitStrategy::MeanImputedSvd => {
            let centered = DMatrix::from_fn(m, n, |i, k| {
                if data.is_observed(i, k) {
                    data.values()[(i, k)] - mean[i]
                } else {
                    0.0
                }
            });
            let svd = centered.svd(true, false);
            let u = svd.u.as_ref().expect("left singular vectors requested");
            let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
            order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
            let scale = (n as f64).sqrt();
            DMatrix::from_fn(m, d, |i, j| {
                let c = order[j];
                u[(i, c)] * svd.singular_values[c] / scale
            })
        }
    };
    let psi = BlockSpd::from_diagonal(layout.sizes(), var.as_slice())?;
    ModelParams::new(loadings, mean, psi, layout.clone(), config.ridge_lambda)
}

fn check_latent_dim(d: usize, min_size: usize) -> Result<()> {
    if d < 1 {
        return Err(GpccaError::invalid("d must be ≥ 1"));
    }
    if d > min_size {
        return Err(GpccaError::invalid(format!(
            "d = {d} exceeds the smallest modality size {min_size}"
        )));
    }
    Ok(())
}

fn check_compatible(data: &ObservedDataset, params: &ModelParams) -> Result<()> {
    if data.layout() != params.layout() {
        return Err(GpccaError::invalid(format!(
            "data layout {:?} does not match model layout {:?}",
            data.layout().sizes(),
            params.layout().sizes()
        )));
    }
    Ok(())
}

/// Per-data statistics that stay fixed across EM iterations.
///
/// Unobserved entries are stored as the feature's observed mean. Nothing the
/// E-step returns depends on the values stored there, and with this choice the
/// stored matrix is centered, so its O(m_r²·n) scatter is formed once per fit
/// and every iteration only touches the unobserved entries.
pub struct DataCache {
    filled: DMatrix<f64>,
    mean: DVector<f64>,
    // per modality: Σ_k (x̃_k − x̄)(x̃_k − x̄)ᵀ
    scatter: Vec<DMatrix<f64>>,
    // Σ_k (x̃_k − x̄); zero up to rounding
    centered_sum: DVector<f64>,
    // per modality: number of samples with the whole modality unobserved
    absent: Vec<usize>,
}

impl DataCache {
    pub fn new(data: &ObservedDataset) -> Self {
        let layout = data.layout();
        let (mean, _) = data.feature_moments();
        let (m, n) = (data.n_features(), data.n_samples());
        let filled = DMatrix::from_fn(m, n, |i, k| {
            if data.is_observed(i, k) {
                data.values()[(i, k)]
            } else {
                mean[i]
            }
        });
        let mut centered = filled.clone();
        for k in 0..n {
            let mut col = centered.column_mut(k);
            col -= &mean;
        }
        let scatter = (0..layout.count())
            .map(|r| {
                let range = layout.range(r);
                let c = centered.rows(range.start, range.len());
                symmetrize(&(c * c.transpose()))
            })
            .collect();
        let absent = (0..layout.count())
            .map(|r| {
                (0..n)
                    .filter(|&k| data.missing_in_block(k, r).len() == layout.sizes()[r])
                    .count()
            })
            .collect();
        Self {
            centered_sum: centered.column_sum(),
            filled,
            mean,
            scatter,
            absent,
        }
    }

    /// Σ_k (x̃_k − c)(x̃_k − c)ᵀ over the modality starting at `off`.
    fn scatter_about(&self, r: usize, off: usize, center: &DVector<f64>, n: f64) -> DMatrix<f64> {
        let s = self.scatter[r].nrows();
        let delta = self.mean.rows(off, s) - center.rows(off, s);
        let cross = self.centered_sum.rows(off, s) * delta.transpose();
        &self.scatter[r] + &cross + cross.transpose() + &delta * delta.transpose() * n
    }
}

/// Quantities shared by every sample in one E-step.
struct Shared {
    precision: Vec<DMatrix<f64>>,
    psi_logdet: Vec<f64>,
    pw: DMatrix<f64>,
    wpw: Vec<DMatrix<f64>>,
    // x̃_k − μ
    residual: DMatrix<f64>,
    // b0[r]: (PW)_rᵀ R_r, d×n
    b0: Vec<DMatrix<f64>>,
    // Σ_k r_kᵀ P r_k over the modalities each sample has at least partly observed
    quad_total: f64,
    penalty: f64,
}

fn shared_quantities(params: &ModelParams, cache: &DataCache) -> Shared {
    let layout = params.layout();
    let psi = params.psi();
    let w = params.loadings();
    let n = cache.filled.ncols();
    let d = w.ncols();
    let precision: Vec<DMatrix<f64>> = psi.inverse_blocks().iter().map(symmetrize).collect();
    let psi_logdet = (0..layout.count()).map(|r| chol_logdet(psi.factor(r))).collect();

    let mut residual = cache.filled.clone();
    for k in 0..n {
        let mut col = residual.column_mut(k);
        col -= params.means();
    }

    let mut pw = DMatrix::zeros(w.nrows(), d);
    let mut wpw = Vec::with_capacity(layout.count());
    let mut b0 = Vec::with_capacity(layout.count());
    let mut quad_total = 0.0;
    for r in 0..layout.count() {
        let range = layout.range(r);
        let (off, s) = (range.start, range.len());
        let w_r = w.rows(off, s);
        let pw_r = &precision[r] * w_r;
        wpw.push(symmetrize(&(w_r.transpose() * &pw_r)));
        b0.push(pw_r.transpose() * residual.rows(off, s));
        pw.rows_mut(off, s).copy_from(&pw_r);
        // Samples missing the whole modality store x̄ there, so their residual is x̄ − μ.
        let rr = cache.scatter_about(r, off, params.means(), n as f64);
        let delta = cache.mean.rows(off, s) - params.means().rows(off, s);
        quad_total += rr.component_mul(&precision[r]).sum()
            - cache.absent[r] as f64 * delta.dot(&(&precision[r] * &delta));
    }

    let c = n as f64 * (1.0 - params.ridge());
    let penalty = if c == 0.0 {
        0.0
    } else {
        -0.5 * c * correlation_inverse_trace(psi, &precision)
    };
    Shared {
        precision,
        psi_logdet,
        pw,
        wpw,
        residual,
        b0,
        quad_total,
        penalty,
    }
}

struct SampleMoments {
    latent_mean: DVector<f64>,
    latent_cov: DMatrix<f64>,
    // log-likelihood of the sample without the shared quadratic term
    loglik_part: f64,
    missing: Vec<MissingBlock>,
    // E(x_m | x̃_k) per missing block
    completed: Vec<DVector<f64>>,
}

struct PartialBlock {
    block: usize,
    rows: Vec<usize>,
    effective_loadings: DMatrix<f64>,
    residual_cov: DMatrix<f64>,
    shift: DVector<f64>,
}

fn sample_moments(
    k: usize,
    data: &ObservedDataset,
    params: &ModelParams,
    cache: &DataCache,
    shared: &Shared,
) -> Result<SampleMoments> {
    let layout = params.layout();
    let d = params.latent_dim();
    let mut a = DMatrix::<f64>::zeros(d, d);
    let mut b = DVector::<f64>::zeros(d);
    let mut quad_correction = 0.0;
    let mut psi_logdet = 0.0;
    let mut partial = Vec::new();

    for r in 0..layout.count() {
        let miss = data.missing_in_block(k, r);
        let off = layout.offsets()[r];
        let size = layout.sizes()[r];
        if miss.len() == size {
            // Whole modality unobserved: it contributes nothing to the observed
            // likelihood and x_r | z is the prior conditional.
            partial.push(PartialBlock {
                block: r,
                rows: (off..off + size).collect(),
                effective_loadings: params.loadings().rows(off, size).into_owned(),
                residual_cov: params.psi().block(r).clone(),
                shift: params.means().rows(off, size).into_owned(),
            });
            continue;
        }
        a += &shared.wpw[r];
        b += shared.b0[r].column(k);
        psi_logdet += shared.psi_logdet[r];
        if miss.is_empty() {
            continue;
        }
        let prec = &shared.precision[r];
        let (s, logdet_pmm) = spd_inverse(select_square(prec, miss)).ok_or_else(|| {
            GpccaError::degenerate(format!(
                "precision sub-block of modality {} is not positive definite (sample {})",
                r + 1,
                k + 1
            ))
        })?;
        psi_logdet += logdet_pmm;
        let rows: Vec<usize> = miss.iter().map(|&i| off + i).collect();
        let y = shared.pw.select_rows(&rows);
        let res = shared.residual.view((off, k), (size, 1));
        // (P r_k)_m, using the symmetry of P
        let g = DVector::from_iterator(miss.len(), miss.iter().map(|&i| prec.column(i).dot(&res)));
        let wstar = &s * &y;
        let sg = &s * &g;
        a -= y.transpose() * &wstar;
        b -= y.transpose() * &sg;
        quad_correction += g.dot(&sg);
        let stored = DVector::from_iterator(rows.len(), rows.iter().map(|&i| cache.filled[(i, k)]));
        partial.push(PartialBlock {
            block: r,
            rows,
            effective_loadings: wstar,
            residual_cov: s,
            shift: stored - sg,
        });
    }

    let mut inner = symmetrize(&a);
    for j in 0..d {
        inner[(j, j)] += 1.0;
    }
    let (latent_cov, inner_logdet) = spd_inverse(inner).ok_or_else(|| {
        GpccaError::degenerate(format!("posterior precision of sample {} is not positive definite", k + 1))
    })?;
    let latent_mean = &latent_cov * &b;
    let loglik_part = -0.5
        * (data.observed_count(k) as f64 * LN_2PI + psi_logdet + inner_logdet
            - quad_correction
            - b.dot(&latent_mean));

    let mut missing = Vec::with_capacity(partial.len());
    let mut completed = Vec::with_capacity(partial.len());
    for p in partial {
        let ex = &p.shift + &p.effective_loadings * &latent_mean;
        let wm = &p.effective_loadings * &latent_cov;
        let cov = symmetrize(&(&wm * p.effective_loadings.transpose() + &p.residual_cov));
        completed.push(ex);
        missing.push(MissingBlock {
            block: p.block,
            rows: p.rows,
            effective_loadings: p.effective_loadings,
            covariance: cov,
        });
    }
    Ok(SampleMoments {
        latent_mean,
        latent_cov,
        loglik_part,
        missing,
        completed,
    })
}

/// Conditional expectations under `params` and the penalized observed-data log-likelihood.
pub fn e_step(data: &ObservedDataset, params: &ModelParams) -> Result<(EStepBuffers, f64)> {
    check_compatible(data, params)?;
    let buffers = e_step_cached(data, params, &DataCache::new(data))?;
    let penalized = buffers.penalized_loglik();
    Ok((buffers, penalized))
}

fn e_step_cached(data: &ObservedDataset, params: &ModelParams, cache: &DataCache) -> Result<EStepBuffers> {
    let shared = shared_quantities(params, cache);
    let n = data.n_samples();
    let d = params.latent_dim();
    let per_sample: Vec<SampleMoments> = (0..n)
        .into_par_iter()
        .map(|k| sample_moments(k, data, params, cache, &shared))
        .collect::<Result<_>>()?;

    let mut latent_means = DMatrix::zeros(d, n);
    let mut latent_covs = Vec::with_capacity(n);
    let mut completed = cache.filled.clone();
    let mut missing = Vec::with_capacity(n);
    let mut loglik = -0.5 * shared.quad_total;
    for (k, s) in per_sample.into_iter().enumerate() {
        latent_means.set_column(k, &s.latent_mean);
        latent_covs.push(s.latent_cov);
        loglik += s.loglik_part;
        for (mb, ex) in s.missing.iter().zip(&s.completed) {
            for (a, &i) in mb.rows.iter().enumerate() {
                completed[(i, k)] = ex[a];
            }
        }
        missing.push(s.missing);
    }
    Ok(EStepBuffers {
        latent_means,
        latent_covs,
        completed,
        missing,
        loglik,
        penalty: shared.penalty,
    })
}

/// Sums over samples that every M-step variant needs.
struct Moments<'a> {
    ex: &'a DMatrix<f64>,
    ez: &'a DMatrix<f64>,
    sum_latent_cov: DMatrix<f64>,
    // Σ_k Cov(x_k, z_k | x̃_k), m×d
    sum_cross_cov: DMatrix<f64>,
}

fn moments(buffers: &EStepBuffers, m: usize) -> Moments<'_> {
    let d = buffers.latent_means.nrows();
    let mut sum_latent_cov = DMatrix::zeros(d, d);
    let mut sum_cross_cov = DMatrix::zeros(m, d);
    for (k, mk) in buffers.latent_covs.iter().enumerate() {
        sum_latent_cov += mk;
        for mb in &buffers.missing[k] {
            let c = &mb.effective_loadings * mk;
            for (a, &i) in mb.rows.iter().enumerate() {
                let mut row = sum_cross_cov.row_mut(i);
                row += c.row(a);
            }
        }
    }
    Moments {
        ex: &buffers.completed,
        ez: &buffers.latent_means,
        sum_latent_cov,
        sum_cross_cov,
    }
}

fn update_mean_and_loadings(
    mom: &Moments<'_>,
    params: &ModelParams,
    order: MStepOrder,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = mom.ez.ncols() as f64;
    let w = params.loadings();
    let mean = (mom.ex - w * mom.ez).column_mean();
    let center = match order {
        MStepOrder::Sequential => &mean,
        MStepOrder::Simultaneous => params.means(),
    };
    let ez_sum = mom.ez.column_sum();
    let a = mom.ex * mom.ez.transpose() - center * ez_sum.transpose() + &mom.sum_cross_cov;
    let b = mom.ez * mom.ez.transpose() + &mom.sum_latent_cov;
    let chol = Cholesky::new(symmetrize(&b)).ok_or_else(|| {
        GpccaError::Singular(format!(
            "Σ E(z zᵀ) is not invertible (d = {}, n = {n}); d may be too large",
            b.nrows()
        ))
    })?;
    let loadings = chol.solve(&a.transpose()).transpose();
    Ok((mean, loadings))
}

/// One M-step: μ, W and the ridge-inflated block-diagonal Ψ.
pub fn m_step(
    data: &ObservedDataset,
    buffers: &EStepBuffers,
    params: &ModelParams,
    lambda: f64,
) -> Result<ModelParams> {
    m_step_ordered(data, buffers, params, lambda, MStepOrder::Sequential)
}

pub fn m_step_ordered(
    data: &ObservedDataset,
    buffers: &EStepBuffers,
    params: &ModelParams,
    lambda: f64,
    order: MStepOrder,
) -> Result<ModelParams> {
    check_compatible(data, params)?;
    check_ridge(lambda)?;
    if buffers.n_samples() != data.n_samples() || buffers.latent_means.nrows() != params.latent_dim() {
        return Err(GpccaError::invalid("E-step buffers do not match data and parameters"));
    }
    m_step_cached(data, buffers, params, lambda, order, &DataCache::new(data))
}

fn m_step_cached(
    data: &ObservedDataset,
    buffers: &EStepBuffers,
    params: &ModelParams,
    lambda: f64,
    order: MStepOrder,
    cache: &DataCache,
) -> Result<ModelParams> {
    let layout = params.layout();
    let n = data.n_samples() as f64;
    let mom = moments(buffers, data.n_features());
    let (mean, loadings) = update_mean_and_loadings(&mom, params, order)?;
    let (mu_psi, w_psi) = match order {
        MStepOrder::Sequential => (&mean, &loadings),
        MStepOrder::Simultaneous => (params.means(), params.loadings()),
    };

    // Σ_k E[(x_k − μ) z_kᵀ] and Σ_k E[z_k z_kᵀ]
    let ez_sum = mom.ez.column_sum();
    let xz = mom.ex * mom.ez.transpose() - mu_psi * ez_sum.transpose() + &mom.sum_cross_cov;
    let zz = mom.ez * mom.ez.transpose() + &mom.sum_latent_cov;

    // Σ_k E[(x_k − μ)(x_k − μ)ᵀ] starts from the stored-data scatter; with
    // E(x_k) = x̃_k + δ_k (δ_k nonzero only at unobserved entries) the correction
    // is Σ_k [v_k δ_kᵀ + δ_k v_kᵀ + δ_k δ_kᵀ + Cov_k], v_k = x̃_k − μ.
    let mut blocks: Vec<DMatrix<f64>> = (0..layout.count())
        .map(|r| cache.scatter_about(r, layout.offsets()[r], mu_psi, n))
        .collect();
    let mut cross: Vec<DMatrix<f64>> = layout.sizes().iter().map(|&s| DMatrix::zeros(s, s)).collect();
    for (k, missing) in buffers.missing.iter().enumerate() {
        for mb in missing {
            let off = layout.offsets()[mb.block];
            let size = layout.sizes()[mb.block];
            let v = cache.filled.view((off, k), (size, 1)) - mu_psi.rows(off, size);
            let delta: Vec<f64> = mb.rows.iter().map(|&i| mom.ex[(i, k)] - cache.filled[(i, k)]).collect();
            let t = &mut cross[mb.block];
            for (a, &i) in mb.rows.iter().enumerate() {
                let mut col = t.column_mut(i - off);
                col.axpy(delta[a], &v.column(0), 1.0);
            }
            let block = &mut blocks[mb.block];
            for (a, &i) in mb.rows.iter().enumerate() {
                for (b, &j) in mb.rows.iter().enumerate() {
                    block[(i - off, j - off)] += mb.covariance[(a, b)] + delta[a] * delta[b];
                }
            }
        }
    }
    for r in 0..layout.count() {
        let range = layout.range(r);
        let (off, s) = (range.start, range.len());
        let w_r = w_psi.rows(off, s);
        let wx = w_r * xz.rows(off, s).transpose();
        let block = &mut blocks[r];
        *block += &cross[r] + cross[r].transpose() - &wx - wx.transpose() + w_r * &zz * w_r.transpose();
    }
    finish_m_step(blocks, n, lambda, mean, loadings, params)
}

fn finish_m_step(
    blocks: Vec<DMatrix<f64>>,
    n: f64,
    lambda: f64,
    mean: DVector<f64>,
    loadings: DMatrix<f64>,
    params: &ModelParams,
) -> Result<ModelParams> {
    let blocks = blocks
        .into_iter()
        .map(|b| {
            let mut b = symmetrize(&b) / n;
            inflate_diagonal(&mut b, lambda);
            b
        })
        .collect();
    let psi = BlockSpd::new(blocks)?;
    ModelParams::new(loadings, mean, psi, params.layout().clone(), lambda)
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    (cur - prev).abs() / (prev.abs() + 1.0)
}

/// Runs EM from [`init_params`] until the relative change of the penalized
/// log-likelihood drops below `config.rel_tolerance` or the iteration cap is hit.
pub fn fit(data: &ObservedDataset, d: usize, config: &EmConfig) -> Result<FitReport> {
    let init = init_params(data, d, config)?;
    fit_from(data, init, config)
}

/// The shared EM loop; `step` performs one M-step followed by an E-step.
fn run_em(
    init: ModelParams,
    first: EStepBuffers,
    config: &EmConfig,
    mut step: impl FnMut(&EStepBuffers, &ModelParams) -> Result<(ModelParams, EStepBuffers)>,
) -> Result<FitReport> {
    let mut params = init;
    let mut buffers = first;
    let mut trace = vec![buffers.penalized_loglik()];
    let mut raw = vec![buffers.loglik()];
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=config.max_iterations {
        let (next_params, next) = step(&buffers, &params).map_err(|e| e.at_iteration(it))?;
        params = next_params;
        buffers = next;
        iterations = it;
        let prev = *trace.last().unwrap();
        let ll = buffers.penalized_loglik();
        trace.push(ll);
        raw.push(buffers.loglik());
        if !ll.is_finite() {
            return Err(GpccaError::degenerate("non-finite log-likelihood").at_iteration(it));
        }
        if relative_change(prev, ll) < config.rel_tolerance {
            converged = true;
            break;
        }
    }
    Ok(FitReport {
        loglik_trace: trace,
        unpenalized_trace: raw,
        iterations,
        converged,
        posterior: buffers.posterior(),
        final_params: params,
    })
}

/// EM from explicit starting parameters.
pub fn fit_from(data: &ObservedDataset, init: ModelParams, config: &EmConfig) -> Result<FitReport> {
    config.validate()?;
    check_compatible(data, &init)?;
    let cache = DataCache::new(data);
    let lambda = config.ridge_lambda;
    let first = e_step_cached(data, &init, &cache).map_err(|e| e.at_iteration(0))?;
    run_em(init, first, config, |buffers, params| {
        let next = m_step_cached(data, buffers, params, lambda, config.m_step_order, &cache)?;
        let buffers = e_step_cached(data, &next, &cache)?;
        Ok((next, buffers))
    })
}

fn e_step_complete(data: &ObservedDataset, params: &ModelParams, cache: &DataCache) -> Result<EStepBuffers> {
    let layout = params.layout();
    let psi = params.psi();
    let w = params.loadings();
    let x = data.values();
    let n = data.n_samples();
    let nf = n as f64;
    let d = w.ncols();
    let precision: Vec<DMatrix<f64>> = psi.inverse_blocks().iter().map(symmetrize).collect();
    let mut pw = DMatrix::zeros(w.nrows(), d);
    let mut quad = 0.0;
    for r in 0..layout.count() {
        let range = layout.range(r);
        let (off, s) = (range.start, range.len());
        pw.rows_mut(off, s).copy_from(&(&precision[r] * w.rows(off, s)));
        quad += cache
            .scatter_about(r, off, params.means(), nf)
            .component_mul(&precision[r])
            .sum();
    }
    let mut inner = symmetrize(&(w.transpose() * &pw));
    for j in 0..d {
        inner[(j, j)] += 1.0;
    }
    let (m, inner_logdet) =
        spd_inverse(inner).ok_or_else(|| GpccaError::degenerate("posterior precision is not positive definite"))?;
    let shift = pw.transpose() * params.means();
    let mut b = pw.transpose() * x;
    for k in 0..n {
        let mut col = b.column_mut(k);
        col -= &shift;
    }
    let ez = &m * &b;
    let explained = b.component_mul(&ez).sum();
    let loglik = -0.5
        * (nf * data.n_features() as f64 * LN_2PI + nf * (psi.logdet() + inner_logdet) + quad - explained);
    let c = nf * (1.0 - params.ridge());
    let penalty = if c == 0.0 {
        0.0
    } else {
        -0.5 * c * correlation_inverse_trace(psi, &precision)
    };
    Ok(EStepBuffers {
        latent_means: ez,
        latent_covs: vec![m; n],
        completed: x.clone(),
        missing: vec![Vec::new(); n],
        loglik,
        penalty,
    })
}

fn m_step_complete(
    data: &ObservedDataset,
    buffers: &EStepBuffers,
    params: &ModelParams,
    cache: &DataCache,
    lambda: f64,
    order: MStepOrder,
) -> Result<ModelParams> {
    let layout = params.layout();
    let n = data.n_samples() as f64;
    let ez = &buffers.latent_means;
    let mom = Moments {
        ex: data.values(),
        ez,
        sum_latent_cov: &buffers.latent_covs[0] * n,
        sum_cross_cov: DMatrix::zeros(data.n_features(), ez.nrows()),
    };
    let (mean, loadings) = update_mean_and_loadings(&mom, params, order)?;
    let (mu_psi, w_psi) = match order {
        MStepOrder::Sequential => (&mean, &loadings),
        MStepOrder::Simultaneous => (params.means(), params.loadings()),
    };
    let ez_sum = ez.column_sum();
    let xz = data.values() * ez.transpose() - mu_psi * ez_sum.transpose();
    let zz = ez * ez.transpose() + &mom.sum_latent_cov;
    let blocks = (0..layout.count())
        .map(|r| {
            let range = layout.range(r);
            let (off, s) = (range.start, range.len());
            let w_r = w_psi.rows(off, s);
            let wx = w_r * xz.rows(off, s).transpose();
            cache.scatter_about(r, off, mu_psi, n) - &wx - wx.transpose() + w_r * &zz * w_r.transpose()
        })
        .collect();
    finish_m_step(blocks, n, lambda, mean, loadings, params)
}

/// EM for fully observed data; all samples share one posterior covariance.
pub fn fit_complete(data: &ObservedDataset, d: usize, config: &EmConfig) -> Result<FitReport> {
    if !data.is_complete() {
        return Err(GpccaError::invalid(
            "fit_complete requires fully observed data; use fit for data with missing entries",
        ));
    }
    let init = init_params(data, d, config)?;
    let lambda = config.ridge_lambda;
    let cache = DataCache::new(data);
    let first = e_step_complete(data, &init, &cache).map_err(|e| e.at_iteration(0))?;
    run_em(init, first, config, |buffers, params| {
        let next = m_step_complete(data, buffers, params, &cache, lambda, config.m_step_order)?;
        let buffers = e_step_complete(data, &next, &cache)?;
        Ok((next, buffers))
    })
}

/// Posterior-mean embedding E(z_k | x̃_k), d×n.
pub fn transform(params: &ModelParams, data: &ObservedDataset) -> Result<DMatrix<f64>> {
    let (buffers, _) = e_step(data, params)?;
    Ok(buffers.latent_means)
}

/// Observed entries copied, unobserved entries replaced by E(X_ik | x̃_k).
pub fn impute(params: &ModelParams, data: &ObservedDataset) -> Result<DMatrix<f64>> {
    let (buffers, _) = e_step(data, params)?;
    let mut out = buffers.completed;
    for k in 0..data.n_samples() {
        for i in 0..data.n_features() {
            if data.is_observed(i, k) {
                out[(i, k)] = data.values()[(i, k)];
            }
        }
    }
    Ok(out)
}
