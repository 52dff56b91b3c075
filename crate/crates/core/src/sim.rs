//! Synthetic three-modality, six-cluster data with planted labels.
//!
//! Each modality has m_r/5 informative features whose distribution depends on
//! the cluster (two distributions f_u and f_v per modality, sharing one
//! covariance) followed by cluster-independent noise features.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, ChiSquared, Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::cluster::Partition;
use crate::error::{GpccaError, Result};
use crate::model::{validate_dataset, ModalityLayout, ObservedDataset};

/// Which of the two informative distributions each cluster follows, per modality
/// (`true` = f_u, `false` = f_v).
pub const CLUSTER_DESIGN: [[bool; 3]; 6] = [
    [true, true, true],
    [false, false, true],
    [true, false, true],
    [false, true, false],
    [false, true, true],
    [true, false, false],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimCase {
    /// Normal data, entries missing completely at random.
    A,
    /// Multivariate t₃ informative features and t₃ noise, MCAR.
    B,
    /// Normal data, whole modalities missing depending on a hidden variable.
    C,
    /// Normal data with cross-modality correlation among informative features, MCAR.
    D,
}

impl std::str::FromStr for SimCase {
    type Err = GpccaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(SimCase::A),
            "B" => Ok(SimCase::B),
            "C" => Ok(SimCase::C),
            "D" => Ok(SimCase::D),
            _ => Err(GpccaError::invalid(format!("unknown case '{s}' (expected A, B, C or D)"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSpec {
    pub case: SimCase,
    pub rho: f64,
    /// Entry-wise missing probability (cases A, B, D).
    pub missing_rate: f64,
    /// Baseline modality-missing probability (case C).
    pub p: f64,
    pub dims: Vec<usize>,
    pub cluster_size: usize,
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            case: SimCase::A,
            rho: 0.5,
            missing_rate: 0.0,
            p: 0.0,
            dims: vec![60, 120, 180],
            cluster_size: 100,
            seed: 0,
        }
    }
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(GpccaError::invalid(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if self.dims.len() != 3 {
            return Err(GpccaError::invalid("exactly three modality sizes are required"));
        }
        if let Some(&m) = self.dims.iter().find(|&&m| m < 5 || m % 5 != 0) {
            return Err(GpccaError::invalid(format!(
                "modality size {m} must be a positive multiple of 5"
            )));
        }
        if self.cluster_size < 1 {
            return Err(GpccaError::invalid("cluster_size must be ≥ 1"));
        }
        match self.case {
            SimCase::C => {
                if self.missing_rate != 0.0 {
                    return Err(GpccaError::invalid("Case C takes --p"));
                }
                if !(0.0..=0.5).contains(&self.p) {
                    return Err(GpccaError::invalid(format!("p must lie in [0, 0.5], got {}", self.p)));
                }
            }
            _ => {
                if self.p != 0.0 {
                    return Err(GpccaError::invalid(format!("Case {:?} takes --missing", self.case)));
                }
                if !(0.0..1.0).contains(&self.missing_rate) {
                    return Err(GpccaError::invalid(format!(
                        "missing rate must lie in [0, 1), got {}",
                        self.missing_rate
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        CLUSTER_DESIGN.len() * self.cluster_size
    }
}

/// Planted informative-feature parameters of one modality.
#[derive(Debug, Clone)]
pub struct ModalityTruth {
    pub mean_u: DVector<f64>,
    pub mean_v: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub dataset: ObservedDataset,
    pub truth: Partition,
    /// Values before masking, features × samples.
    pub complete_values: DMatrix<f64>,
    /// Hidden variable H_k (case C only).
    pub hidden: Option<DVector<f64>>,
    pub modalities: Vec<ModalityTruth>,
    /// Joint covariance of all informative features (block diagonal except in case D).
    pub informative_covariance: DMatrix<f64>,
    /// Whether the case-D covariance had to be projected back to positive definite.
    pub spd_projected: bool,
    /// Case-C samples whose modality drops were redrawn because every modality was lost.
    pub redraws: usize,
}

/// Toeplitz correlation with entries ρ^|i−j|.
pub fn ar1_correlation(size: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(size, size, |i, j| rho.powi(i.abs_diff(j) as i32))
}

fn normal_columns<R: Rng>(mean: &DVector<f64>, chol: &DMatrix<f64>, count: usize, rng: &mut R) -> DMatrix<f64> {
    let m = mean.len();
    let mut out = DMatrix::zeros(m, count);
    for k in 0..count {
        let e = DVector::from_fn(m, |_, _| StandardNormal.sample(rng));
        out.set_column(k, &(mean + chol * e));
    }
    out
}

fn t_columns<R: Rng>(mean: &DVector<f64>, chol: &DMatrix<f64>, dof: f64, count: usize, rng: &mut R) -> DMatrix<f64> {
    let m = mean.len();
    let chi = ChiSquared::new(dof).expect("positive degrees of freedom");
    let mut out = DMatrix::zeros(m, count);
    for k in 0..count {
        let e = DVector::from_fn(m, |_, _| StandardNormal.sample(rng));
        let scale = (chi.sample(rng) / dof).sqrt();
        out.set_column(k, &(mean + chol * e / scale));
    }
    out
}

fn check_factor(mean: &DVector<f64>, chol: &DMatrix<f64>) -> Result<()> {
    if chol.nrows() != mean.len() || !chol.is_square() {
        return Err(GpccaError::invalid("Cholesky factor does not match mean length"));
    }
    Ok(())
}

/// `count` draws (as columns) from N(mean, LLᵀ).
pub fn mvnormal_sample(mean: &DVector<f64>, chol: &DMatrix<f64>, count: usize, seed: u64) -> Result<DMatrix<f64>> {
    check_factor(mean, chol)?;
    Ok(normal_columns(mean, chol, count, &mut ChaCha8Rng::seed_from_u64(seed)))
}

/// `count` draws from the multivariate t with scale LLᵀ: μ + Lε / sqrt(χ²_ν/ν).
pub fn mvt_sample(mean: &DVector<f64>, chol: &DMatrix<f64>, dof: f64, count: usize, seed: u64) -> Result<DMatrix<f64>> {
    check_factor(mean, chol)?;
    if !(dof > 0.0) {
        return Err(GpccaError::invalid("degrees of freedom must be positive"));
    }
    Ok(t_columns(mean, chol, dof, count, &mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Moves 1/6 of the within-modality off-diagonal entries to zero cross-modality
/// positions, symmetrically. Returns whether an SPD projection was needed.
fn swap_cross_modality<R: Rng>(cov: &mut DMatrix<f64>, sizes: &[usize], rng: &mut R) -> bool {
    let mut block = Vec::with_capacity(cov.nrows());
    for (r, &s) in sizes.iter().enumerate() {
        block.extend(std::iter::repeat_n(r, s));
    }
    let q = cov.nrows();
    let mut within = Vec::new();
    let mut across = Vec::new();
    for i in 0..q {
        for j in i + 1..q {
            if block[i] == block[j] {
                within.push((i, j));
            } else {
                across.push((i, j));
            }
        }
    }
    let count = (within.len() / 6).min(across.len());
    let from = sample_indices(rng, within.len(), count);
    let to = sample_indices(rng, across.len(), count);
    for (a, b) in from.iter().zip(to.iter()) {
        let (i, j) = within[a];
        let (u, v) = across[b];
        let value = cov[(i, j)];
        cov[(i, j)] = 0.0;
        cov[(j, i)] = 0.0;
        cov[(u, v)] = value;
        cov[(v, u)] = value;
    }
    if Cholesky::new(cov.clone()).is_some() {
        return false;
    }
    let eig = cov.clone().symmetric_eigen();
    let clipped = eig.eigenvalues.map(|l| l.max(1e-8));
    let v = &eig.eigenvectors;
    let mut projected = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    projected = (&projected + projected.transpose()) * 0.5;
    *cov = projected;
    true
}

pub fn generate(spec: &SimSpec) -> Result<SimOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_samples();
    let layout = ModalityLayout::new(spec.dims.clone())?;
    let informative: Vec<usize> = spec.dims.iter().map(|m| m / 5).collect();
    let scale = Beta::new(1.0, 1.0).expect("valid beta parameters");

    let modalities: Vec<ModalityTruth> = informative
        .iter()
        .map(|&q| {
            let mean_u = DVector::from_fn(q, |_, _| rng.random_range(1.0..=2.0));
            let mean_v = DVector::from_fn(q, |_, _| rng.random_range(-2.0..=-1.0));
            let sigma = DVector::from_fn(q, |_, _| 4.0 * scale.sample(&mut rng));
            let d = DMatrix::from_diagonal(&sigma);
            let covariance = &d * ar1_correlation(q, spec.rho) * &d;
            ModalityTruth {
                mean_u,
                mean_v,
                covariance,
            }
        })
        .collect();

    let q_total: usize = informative.iter().sum();
    let mut informative_covariance = DMatrix::zeros(q_total, q_total);
    let mut off = 0;
    for (t, &q) in modalities.iter().zip(&informative) {
        informative_covariance.view_mut((off, off), (q, q)).copy_from(&t.covariance);
        off += q;
    }
    let spd_projected = spec.case == SimCase::D
        && swap_cross_modality(&mut informative_covariance, &informative, &mut rng);
    if spd_projected {
        log::info!("case D covariance projected to positive definite");
    }

    let mut values = DMatrix::zeros(layout.total(), n);
    let mut labels = Vec::with_capacity(n);
    let t3 = StudentT::new(3.0).expect("valid dof");
    for (c, design) in CLUSTER_DESIGN.iter().enumerate() {
        let cols = c * spec.cluster_size..(c + 1) * spec.cluster_size;
        labels.extend(std::iter::repeat_n(c, spec.cluster_size));
        let means: Vec<&DVector<f64>> = modalities
            .iter()
            .zip(design)
            .map(|(t, &u)| if u { &t.mean_u } else { &t.mean_v })
            .collect();
        let blocks: Vec<DMatrix<f64>> = if spec.case == SimCase::D {
            let mean = DVector::from_iterator(q_total, means.iter().flat_map(|m| m.iter().copied()));
            let chol = Cholesky::new(informative_covariance.clone())
                .ok_or_else(|| GpccaError::degenerate("informative covariance is not positive definite"))?
                .unpack();
            let joint = normal_columns(&mean, &chol, spec.cluster_size, &mut rng);
            let mut at = 0;
            informative
                .iter()
                .map(|&q| {
                    let b = joint.rows(at, q).into_owned();
                    at += q;
                    b
                })
                .collect()
        } else {
            modalities
                .iter()
                .zip(&means)
                .map(|(t, mean)| {
                    let chol = Cholesky::new(t.covariance.clone())
                        .ok_or_else(|| GpccaError::degenerate("AR(1) covariance is not positive definite"))?
                        .unpack();
                    Ok(match spec.case {
                        SimCase::B => t_columns(mean, &chol, 3.0, spec.cluster_size, &mut rng),
                        _ => normal_columns(mean, &chol, spec.cluster_size, &mut rng),
                    })
                })
                .collect::<Result<_>>()?
        };
        for (r, b) in blocks.iter().enumerate() {
            let start = layout.offsets()[r];
            values.view_mut((start, cols.start), (b.nrows(), b.ncols())).copy_from(b);
        }
    }
    for r in 0..layout.count() {
        let range = layout.range(r);
        for i in range.start + informative[r]..range.end {
            for k in 0..n {
                values[(i, k)] = match spec.case {
                    SimCase::B => t3.sample(&mut rng),
                    _ => StandardNormal.sample(&mut rng),
                };
            }
        }
    }

    let mut mask = DMatrix::from_element(layout.total(), n, true);
    let mut hidden = None;
    let mut redraws = 0;
    if spec.case == SimCase::C {
        let h = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        for k in 0..n {
            let prob = if h[k] >= 0.0 { spec.p } else { 2.0 * spec.p };
            let drops = loop {
                let drops: Vec<bool> = (0..layout.count()).map(|_| rng.random::<f64>() < prob).collect();
                if drops.iter().all(|&d| d) {
                    redraws += 1;
                    continue;
                }
                break drops;
            };
            for (r, &drop) in drops.iter().enumerate() {
                if drop {
                    for i in layout.range(r) {
                        mask[(i, k)] = false;
                    }
                }
            }
        }
        if redraws > 0 {
            log::info!("{redraws} samples redrawn after losing every modality");
        }
        hidden = Some(h);
    } else if spec.missing_rate > 0.0 {
        for v in mask.iter_mut() {
            *v = rng.random::<f64>() >= spec.missing_rate;
        }
    }

    let dataset = validate_dataset(values.clone(), mask, layout)?;
    Ok(SimOutput {
        dataset,
        truth: Partition::from_labels(&labels),
        complete_values: values,
        hidden,
        modalities,
        informative_covariance,
        spd_projected,
        redraws,
    })
}
