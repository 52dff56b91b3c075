//! Consensus-based choice of the latent dimension.
//!
//! For each candidate d, B independently initialized fits are clustered; the
//! stability of those clusterings across initializations (the consensus score)
//! decides d, and the initialization whose clustering is closest to the
//! consensus is kept.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::cluster::{knn_graph, louvain, Partition, DEFAULT_NEIGHBORS, DEFAULT_RESOLUTION};
use crate::em::{fit, fit_complete, EmConfig};
use crate::error::{GpccaError, Result};
use crate::model::{FitReport, ObservedDataset};

pub const DEFAULT_INITS: usize = 10;
pub const DEFAULT_CANDIDATES: [usize; 6] = [2, 3, 4, 6, 8, 10];

/// Fraction of clusterings placing i and j together. Labels are compared only for equality.
pub fn consensus_matrix<T: PartialEq>(clusterings: &[Vec<T>]) -> Result<DMatrix<f64>> {
    let b = clusterings.len();
    if b == 0 {
        return Err(GpccaError::invalid("at least one clustering is required"));
    }
    let n = clusterings[0].len();
    if clusterings.iter().any(|c| c.len() != n) {
        return Err(GpccaError::invalid("clusterings have different lengths"));
    }
    let mut counts = DMatrix::<f64>::zeros(n, n);
    for labels in clusterings {
        for i in 0..n {
            for j in i + 1..n {
                if labels[i] == labels[j] {
                    counts[(i, j)] += 1.0;
                }
            }
        }
    }
    let scale = 1.0 / b as f64;
    Ok(DMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Equal => 1.0,
        std::cmp::Ordering::Less => counts[(i, j)] * scale,
        std::cmp::Ordering::Greater => counts[(j, i)] * scale,
    }))
}

/// Binary co-clustering matrix of a single clustering.
pub fn connectivity_matrix<T: PartialEq>(labels: &[T]) -> DMatrix<f64> {
    let n = labels.len();
    DMatrix::from_fn(n, n, |i, j| if labels[i] == labels[j] { 1.0 } else { 0.0 })
}

/// Σ_{i<j} C_ij log₂ C_ij with 0·log 0 = 0; zero exactly when every entry is 0 or 1.
pub fn consensus_score(c: &DMatrix<f64>) -> Result<f64> {
    if !c.is_square() {
        return Err(GpccaError::invalid("consensus matrix must be square"));
    }
    let n = c.nrows();
    let mut h = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let v = c[(i, j)];
            if !(0.0..=1.0).contains(&v) {
                return Err(GpccaError::invalid(format!(
                    "consensus entry ({}, {}) = {v} outside [0, 1]",
                    i + 1,
                    j + 1
                )));
            }
            if v > 0.0 && v < 1.0 {
                h += v * v.log2();
            }
        }
    }
    Ok(h)
}

/// Root mean squared difference between a connectivity and the consensus over pairs i < j.
pub fn init_rmse(connectivity: &DMatrix<f64>, consensus: &DMatrix<f64>) -> Result<f64> {
    if connectivity.shape() != consensus.shape() || !consensus.is_square() {
        return Err(GpccaError::invalid(format!(
            "shape mismatch: connectivity {:?} vs consensus {:?}",
            connectivity.shape(),
            consensus.shape()
        )));
    }
    let n = consensus.nrows();
    if n < 2 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += (connectivity[(i, j)] - consensus[(i, j)]).powi(2);
        }
    }
    Ok((2.0 * sum / (n * (n - 1)) as f64).sqrt())
}

#[derive(Debug, Clone)]
pub struct SelectionConfig {
    pub candidates: Vec<usize>,
    pub inits: usize,
    pub em: EmConfig,
    pub neighbors: usize,
    pub resolution: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            candidates: DEFAULT_CANDIDATES.to_vec(),
            inits: DEFAULT_INITS,
            em: EmConfig::default(),
            neighbors: DEFAULT_NEIGHBORS,
            resolution: DEFAULT_RESOLUTION,
        }
    }
}

/// Seed of initialization `b`; identical across candidate dimensions.
pub fn init_seed(base: u64, b: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ (b as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct InitOutcome {
    pub seed: u64,
    pub fit: FitReport,
    pub clustering: Partition,
}

#[derive(Debug, Clone)]
pub struct CandidateResult {
    pub d: usize,
    /// One entry per initialization; `Err` holds the failure message.
    pub inits: Vec<std::result::Result<InitOutcome, String>>,
    /// Consensus score; −∞ when the candidate is disqualified.
    pub score: f64,
    /// RMSE of each successful initialization against the consensus (NaN for failures).
    pub rmse: Vec<f64>,
    pub disqualified: bool,
    /// Retained for the chosen candidate only.
    pub consensus: Option<DMatrix<f64>>,
}

impl CandidateResult {
    pub fn failures(&self) -> usize {
        self.inits.iter().filter(|r| r.is_err()).count()
    }

    /// n×B labels of the successful initializations.
    pub fn label_columns(&self) -> Vec<&[usize]> {
        self.inits
            .iter()
            .filter_map(|r| r.as_ref().ok())
            .map(|o| o.clustering.labels())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub chosen_d: usize,
    pub chosen_init: usize,
    pub candidates: Vec<CandidateResult>,
}

impl Selection {
    pub fn chosen(&self) -> &CandidateResult {
        self.candidates.iter().find(|c| c.d == self.chosen_d).expect("chosen candidate present")
    }

    pub fn best_fit(&self) -> &InitOutcome {
        self.chosen().inits[self.chosen_init]
            .as_ref()
            .expect("chosen initialization succeeded")
    }
}

fn run_init(data: &ObservedDataset, d: usize, b: usize, config: &SelectionConfig) -> Result<InitOutcome> {
    let seed = init_seed(config.em.seed, b);
    let em = EmConfig { seed, ..config.em.clone() };
    let fit = if data.is_complete() {
        fit_complete(data, d, &em)?
    } else {
        fit(data, d, &em)?
    };
    if !fit.converged {
        log::warn!("d = {d}, init {b}: no convergence after {} iterations", fit.iterations);
    }
    let graph = knn_graph(fit.embeddings(), config.neighbors)?;
    let clustering = louvain(&graph, config.resolution, seed)?;
    Ok(InitOutcome { seed, fit, clustering })
}

fn summarize(d: usize, inits: Vec<std::result::Result<InitOutcome, String>>) -> Result<(CandidateResult, DMatrix<f64>)> {
    let b = inits.len();
    let failures = inits.iter().filter(|r| r.is_err()).count();
    if 2 * failures >= b {
        log::warn!("d = {d} disqualified: {failures} of {b} fits failed");
        return Ok((
            CandidateResult {
                d,
                rmse: vec![f64::NAN; b],
                inits,
                score: f64::NEG_INFINITY,
                disqualified: true,
                consensus: None,
            },
            DMatrix::zeros(0, 0),
        ));
    }
    let labels: Vec<Vec<usize>> = inits
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .map(|o| o.clustering.labels().to_vec())
        .collect();
    let consensus = consensus_matrix(&labels)?;
    let score = consensus_score(&consensus)?;
    let rmse = inits
        .iter()
        .map(|r| match r {
            Ok(o) => init_rmse(&connectivity_matrix(o.clustering.labels()), &consensus),
            Err(_) => Ok(f64::NAN),
        })
        .collect::<Result<_>>()?;
    Ok((
        CandidateResult {
            d,
            inits,
            score,
            rmse,
            disqualified: false,
            consensus: None,
        },
        consensus,
    ))
}

/// Index of the highest-scoring qualified candidate; ties go to the earlier (smaller d).
pub fn choose_dimension(scores: &[f64], disqualified: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&h, &out)) in scores.iter().zip(disqualified).enumerate() {
        if !out && best.is_none_or(|b| h > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Index of the smallest RMSE, skipping failed initializations (NaN); ties go to the earlier index.
pub fn choose_init(rmse: &[f64]) -> Option<usize> {
    rmse.iter()
        .enumerate()
        .filter(|(_, v)| !v.is_nan())
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
}

/// Runs every (d, init) fit, scores each candidate and picks d and the initialization.
pub fn select_latent_dim(data: &ObservedDataset, config: &SelectionConfig) -> Result<Selection> {
    config.em.validate()?;
    if config.inits < 2 {
        return Err(GpccaError::invalid("B ≥ 2 required"));
    }
    if config.candidates.is_empty() {
        return Err(GpccaError::invalid("no candidate dimensions given"));
    }
    if config.candidates.windows(2).any(|w| w[0] >= w[1]) {
        return Err(GpccaError::invalid("candidates must be strictly increasing"));
    }
    let min_size = data.layout().min_size();
    if let Some(&d) = config.candidates.iter().find(|&&d| d < 1 || d > min_size) {
        return Err(GpccaError::invalid(format!(
            "candidate d = {d} outside [1, {min_size}] (smallest modality size)"
        )));
    }

    let jobs: Vec<(usize, usize)> = config
        .candidates
        .iter()
        .flat_map(|&d| (0..config.inits).map(move |b| (d, b)))
        .collect();
    let mut outcomes = jobs
        .par_iter()
        .map(|&(d, b)| {
            run_init(data, d, b, config).map_err(|e| {
                if !e.is_numerical() {
                    log::warn!("d = {d}, init {b}: {e}");
                }
                format!("d = {d}, init {b}: {e}")
            })
        })
        .collect::<Vec<_>>()
        .into_iter();

    let mut candidates = Vec::with_capacity(config.candidates.len());
    let mut consensus = Vec::with_capacity(config.candidates.len());
    for &d in &config.candidates {
        let inits: Vec<_> = outcomes.by_ref().take(config.inits).collect();
        let (result, c) = summarize(d, inits)?;
        log::info!("d = {d}: consensus score {:.6}", result.score);
        candidates.push(result);
        consensus.push(c);
    }
    let scores: Vec<f64> = candidates.iter().map(|c| c.score).collect();
    let disqualified: Vec<bool> = candidates.iter().map(|c| c.disqualified).collect();
    let idx = choose_dimension(&scores, &disqualified).ok_or_else(|| {
        GpccaError::Singular("every candidate dimension was disqualified by failed fits".into())
    })?;
    let chosen = &mut candidates[idx];
    chosen.consensus = Some(consensus.swap_remove(idx));
    let chosen_init = choose_init(&chosen.rmse).expect("a qualified candidate has a successful init");
    Ok(Selection {
        chosen_d: chosen.d,
        chosen_init,
        candidates,
    })
}
