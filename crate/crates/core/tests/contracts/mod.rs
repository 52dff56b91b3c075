//! Small exact-value contracts, shared by the `contracts` test and the acceptance report.
//! Every check panics on failure.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gpcca::cluster::{adjusted_rand_index, knn_graph, louvain, NeighborGraph, Partition};
use gpcca::em::{e_step, fit, fit_complete, impute, init_params, m_step, transform, EmConfig};
use gpcca::linalg::{bdiag_project, block_logdet, block_solve, woodbury_posterior, BlockSpd};
use gpcca::model::{stack_modalities, validate_dataset, ModalityLayout, ModelParams, ObservedDataset};
use gpcca::ridge::{correlation_decompose, ridge_correlation, ridge_covariance, ridge_penalty};
use gpcca::selection::{
    choose_dimension, connectivity_matrix, consensus_matrix, consensus_score, init_rmse, select_latent_dim,
    SelectionConfig,
};
use gpcca::sim::{ar1_correlation, mvnormal_sample};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = (&'static str, fn());

pub fn all() -> Vec<Check> {
    let mut v: Vec<Check> = Vec::new();
    v.extend(library());
    v.extend(cli());
    v
}

pub fn library() -> Vec<Check> {
    vec![
        ("dataset: fully observed 3x2", dataset_fully_observed),
        ("dataset: sample without observations", dataset_empty_sample),
        ("dataset: NaN at observed position", dataset_nan),
        ("stack: concatenation", stack_concat),
        ("stack: single block", stack_single),
        ("stack: sample count mismatch", stack_mismatch),
        ("block_solve: identity", solve_identity),
        ("block_solve: diag(2,2,2)", solve_diag),
        ("woodbury: W = 0", woodbury_zero),
        ("woodbury: orthonormal W, identity Psi", woodbury_orthonormal),
        ("logdet: identity", logdet_identity),
        ("logdet: diag(2,2)", logdet_diag),
        ("bdiag: off-block zeroing", bdiag_offblock),
        ("bdiag: single modality", bdiag_single),
        ("bdiag: ones(3) on [2,1]", bdiag_ones),
        ("init: variance floor", init_floor),
        ("init: observed means", init_means),
        ("init: determinism", init_determinism),
        ("e-step: zero loadings", estep_zero_loadings),
        ("e-step: fully observed sample", estep_observed_sample),
        ("m-step: zero latent means", mstep_zero_latent),
        ("m-step: lambda = 1", mstep_no_inflation),
        ("fit: one iteration", fit_one_iteration),
        ("fit: determinism", fit_determinism),
        ("fit_complete: equals fit", complete_equals_fit),
        ("fit_complete: rejects missing", complete_rejects_missing),
        ("transform: centered input", transform_centered),
        ("transform: W = 0", transform_zero_loadings),
        ("impute: complete data", impute_complete),
        ("impute: W = 0", impute_zero_loadings),
        ("ridge: diagonal Psi", ridge_diag_identity),
        ("ridge: 2x2 decomposition", ridge_two_by_two),
        ("ridge: round trip", ridge_round_trip),
        ("ridge_correlation: lambda = 1", ridge_corr_unit),
        ("ridge_correlation: identity", ridge_corr_identity),
        ("ridge_correlation: 0.8 -> 0.4", ridge_corr_half),
        ("ridge_covariance: lambda = 1", ridge_cov_unit),
        ("ridge_covariance: diag(2,3)", ridge_cov_diag),
        ("penalty: identity", penalty_identity),
        ("penalty: c = 0", penalty_zero),
        ("consensus: B = 1", consensus_single),
        ("consensus: identical columns", consensus_identical),
        ("score: binary", score_binary),
        ("score: single 0.25", score_quarter),
        ("rmse: identical", rmse_identical),
        ("rmse: complement", rmse_complement),
        ("select: single candidate", select_single),
        ("select: argmax", select_argmax),
        ("knn: collinear triple", knn_collinear),
        ("knn: identical points", knn_identical),
        ("knn: degree >= k", knn_degree),
        ("louvain: two cliques", louvain_cliques),
        ("louvain: single node", louvain_single),
        ("ari: identical", ari_identical),
        ("ari: relabeled", ari_relabeled),
        ("ar1: rho = 0", ar1_zero),
        ("ar1: size 3", ar1_three),
        ("ar1: size 50, rho 0.9", ar1_spd),
        ("sampler: determinism", sampler_determinism),
    ]
}

pub fn cli() -> Vec<Check> {
    vec![
        ("cli fit: artifacts", cli_fit_artifacts),
        ("cli fit: row count mismatch", cli_fit_mismatch),
        ("cli fit: d = 0", cli_fit_d_zero),
        ("cli select-d: scores table", cli_select_default),
        ("cli select-d: single candidate", cli_select_single),
        ("cli select-d: one init", cli_select_one_init),
        ("cli impute: complete data", cli_impute_complete),
        ("cli transform: layout mismatch", cli_transform_mismatch),
        ("cli simulate: files", cli_simulate_files),
        ("cli simulate: case C with --missing", cli_simulate_case_c),
        ("cli simulate: determinism", cli_simulate_determinism),
        ("cli evaluate: identical", cli_evaluate_identical),
        ("cli evaluate: disjoint", cli_evaluate_disjoint),
    ]
}

/// Runs checks, returning the names of those that panicked.
pub fn run(checks: &[Check]) -> Vec<&'static str> {
    checks
        .iter()
        .filter(|(name, f)| {
            let ok = std::panic::catch_unwind(*f).is_ok();
            if !ok {
                eprintln!("contract failed: {name}");
            }
            !ok
        })
        .map(|(name, _)| *name)
        .collect()
}

fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    a.shape() == b.shape() && (a - b).amax() <= tol
}

fn layout(sizes: &[usize]) -> ModalityLayout {
    ModalityLayout::new(sizes.to_vec()).unwrap()
}

fn complete(values: DMatrix<f64>, sizes: &[usize]) -> ObservedDataset {
    ObservedDataset::complete(values, layout(sizes)).unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-2.0..2.0))
}

fn random_spd(rng: &mut ChaCha8Rng, s: usize) -> DMatrix<f64> {
    let a = random_matrix(rng, s, s);
    &a * a.transpose() + DMatrix::identity(s, s) * 0.5
}

fn zero_loading_params(sizes: &[usize], d: usize, means: DVector<f64>, lambda: f64) -> ModelParams {
    let m = sizes.iter().sum();
    ModelParams::new(
        DMatrix::zeros(m, d),
        means,
        BlockSpd::identity(sizes).unwrap(),
        layout(sizes),
        lambda,
    )
    .unwrap()
}

// ---- data model ----

fn dataset_fully_observed() {
    let ds = validate_dataset(
        DMatrix::from_row_slice(3, 2, &[1., 2., 3., 4., 5., 6.]),
        DMatrix::from_element(3, 2, true),
        layout(&[2, 1]),
    )
    .unwrap();
    assert_eq!(ds.observed_count(0), 3);
    assert_eq!(ds.observed_count(1), 3);
}

fn dataset_empty_sample() {
    let mut mask = DMatrix::from_element(3, 2, true);
    mask.column_mut(1).fill(false);
    let err = validate_dataset(DMatrix::zeros(3, 2), mask, layout(&[2, 1])).unwrap_err();
    assert_eq!(err.to_string(), "sample 2 has no observed entries");
}

fn dataset_nan() {
    let mut values = DMatrix::from_element(3, 2, 1.0);
    values[(1, 0)] = f64::NAN;
    assert!(validate_dataset(values, DMatrix::from_element(3, 2, true), layout(&[2, 1])).is_err());
}

fn stack_concat() {
    let blocks = [DMatrix::from_element(2, 5, 1.0), DMatrix::from_element(3, 5, 2.0)];
    let masks = [DMatrix::from_element(2, 5, true), DMatrix::from_element(3, 5, true)];
    let ds = stack_modalities(&blocks, &masks).unwrap();
    assert_eq!((ds.n_features(), ds.n_samples()), (5, 5));
    assert_eq!(ds.layout().sizes(), &[2, 3]);
}

fn stack_single() {
    let err = stack_modalities(&[DMatrix::zeros(2, 5)], &[DMatrix::from_element(2, 5, true)]).unwrap_err();
    assert!(err.to_string().contains("R ≥ 2 required"));
}

fn stack_mismatch() {
    let blocks = [DMatrix::from_element(2, 5, 1.0), DMatrix::from_element(3, 4, 1.0)];
    let masks = [DMatrix::from_element(2, 5, true), DMatrix::from_element(3, 4, true)];
    let err = stack_modalities(&blocks, &masks).unwrap_err();
    assert!(err.to_string().contains("sample count mismatch"));
}

// ---- block linear algebra ----

fn solve_identity() {
    let psi = BlockSpd::identity(&[2, 3]).unwrap();
    let rhs = random_matrix(&mut ChaCha8Rng::seed_from_u64(1), 5, 4);
    assert_eq!(block_solve(&psi, &rhs).unwrap(), rhs);
}

fn solve_diag() {
    let psi = BlockSpd::from_diagonal(&[3], &[2., 2., 2.]).unwrap();
    let x = block_solve(&psi, &DMatrix::from_element(3, 1, 1.0)).unwrap();
    assert_eq!(x, DMatrix::from_element(3, 1, 0.5));
}

fn woodbury_zero() {
    let (m, _) = woodbury_posterior(&DMatrix::zeros(4, 2), &BlockSpd::identity(&[2, 2]).unwrap()).unwrap();
    assert_eq!(m, DMatrix::identity(2, 2));
}

fn woodbury_orthonormal() {
    let w = random_matrix(&mut ChaCha8Rng::seed_from_u64(2), 5, 2).qr().q();
    let (m, _) = woodbury_posterior(&w, &BlockSpd::identity(&[2, 3]).unwrap()).unwrap();
    assert!(close(&m, &(DMatrix::identity(2, 2) * 0.5), 1e-14));
}

fn logdet_identity() {
    assert_eq!(block_logdet(&BlockSpd::identity(&[2, 3]).unwrap()), 0.0);
}

fn logdet_diag() {
    let psi = BlockSpd::from_diagonal(&[2], &[2., 2.]).unwrap();
    assert!((block_logdet(&psi) - 2.0 * 2f64.ln()).abs() < 1e-15);
}

fn bdiag_offblock() {
    let b = bdiag_project(&DMatrix::from_row_slice(2, 2, &[1., 5., 7., 2.]), &[1, 1]).unwrap();
    assert_eq!(b, vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 2.0)]);
}

fn bdiag_single() {
    let g = DMatrix::from_row_slice(2, 2, &[1., 3., 3., 2.]);
    assert_eq!(bdiag_project(&g, &[2]).unwrap(), vec![g]);
}

fn bdiag_ones() {
    let b = bdiag_project(&DMatrix::from_element(3, 3, 1.0), &[2, 1]).unwrap();
    assert_eq!(b, vec![DMatrix::from_element(2, 2, 1.0), DMatrix::from_element(1, 1, 1.0)]);
}

// ---- EM ----

fn small_data(seed: u64, n: usize, missing: f64) -> ObservedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = random_matrix(&mut rng, 5, n);
    loop {
        let mask = DMatrix::from_fn(5, n, |_, _| rng.random::<f64>() >= missing);
        if let Ok(ds) = validate_dataset(values.clone(), mask, layout(&[2, 3])) {
            return ds;
        }
    }
}

fn init_floor() {
    let mut values = random_matrix(&mut ChaCha8Rng::seed_from_u64(3), 4, 10);
    values.row_mut(2).fill(1.5);
    let ds = complete(values, &[2, 2]);
    let p = init_params(&ds, 1, &EmConfig::default()).unwrap();
    assert_eq!(p.psi().diagonal()[2], 1e-6);
}

fn init_means() {
    let ds = small_data(4, 12, 0.3);
    let p = init_params(&ds, 1, &EmConfig::default()).unwrap();
    for i in 0..5 {
        let obs: Vec<f64> = (0..12).filter(|&k| ds.is_observed(i, k)).map(|k| ds.values()[(i, k)]).collect();
        let mean = obs.iter().sum::<f64>() / obs.len() as f64;
        assert!((p.means()[i] - mean).abs() < 1e-15);
    }
}

fn init_determinism() {
    let ds = small_data(5, 12, 0.2);
    let cfg = EmConfig { seed: 9, ..Default::default() };
    let (a, b) = (init_params(&ds, 2, &cfg).unwrap(), init_params(&ds, 2, &cfg).unwrap());
    assert_eq!(a.loadings(), b.loadings());
    assert_eq!(a.means(), b.means());
    assert_eq!(a.psi().blocks(), b.psi().blocks());
}

fn estep_zero_loadings() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let values = random_matrix(&mut rng, 5, 7);
    let ds = complete(values.clone(), &[2, 3]);
    let p = zero_loading_params(&[2, 3], 2, DVector::zeros(5), 1.0);
    let (buf, ll) = e_step(&ds, &p).unwrap();
    let expected: f64 = values.iter().map(|x| -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * x * x).sum();
    assert!((ll - expected).abs() < 1e-12 * expected.abs());
    for k in 0..7 {
        assert!(buf.latent_means().column(k).iter().all(|&v| v == 0.0));
        assert!(close(&buf.latent_second_moment(k), &DMatrix::identity(2, 2), 1e-15));
    }
}

fn estep_observed_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ds = small_data(8, 10, 0.3);
    let w = random_matrix(&mut rng, 5, 2);
    let psi = BlockSpd::new(vec![random_spd(&mut rng, 2), random_spd(&mut rng, 3)]).unwrap();
    let p = ModelParams::new(w, DVector::zeros(5), psi, layout(&[2, 3]), 0.5).unwrap();
    let (buf, _) = e_step(&ds, &p).unwrap();
    let mut seen = false;
    for k in (0..10).filter(|&k| ds.observed_count(k) == 5) {
        seen = true;
        let x = ds.values().column(k);
        assert_eq!(buf.completed().column(k), x);
        assert_eq!(buf.second_moment(k), x * x.transpose());
    }
    assert!(seen, "fixture has no fully observed sample");
}

fn mstep_zero_latent() {
    let ds = small_data(10, 12, 0.3);
    let p = zero_loading_params(&[2, 3], 1, ds.feature_moments().0, 0.5);
    let (buf, _) = e_step(&ds, &p).unwrap();
    assert!(buf.latent_means().iter().all(|&v| v == 0.0));
    let next = m_step(&ds, &buf, &p, 0.5).unwrap();
    let mean = buf.completed().column_mean();
    assert!((next.means() - mean).amax() < 1e-14);
}

fn mstep_no_inflation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ds = small_data(12, 15, 0.2);
    let w = random_matrix(&mut rng, 5, 1);
    let psi = BlockSpd::new(vec![random_spd(&mut rng, 2), random_spd(&mut rng, 3)]).unwrap();
    let p = ModelParams::new(w, DVector::zeros(5), psi, layout(&[2, 3]), 1.0).unwrap();
    let (buf, _) = e_step(&ds, &p).unwrap();
    let raw = m_step(&ds, &buf, &p, 1.0).unwrap();
    let half = m_step(&ds, &buf, &p, 0.5).unwrap();
    for (a, b) in raw.psi().blocks().iter().zip(half.psi().blocks()) {
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                let expect = if i == j { 2.0 * a[(i, j)] } else { a[(i, j)] };
                assert!((b[(i, j)] - expect).abs() < 1e-12 * (1.0 + expect.abs()));
            }
        }
    }
}

fn fit_one_iteration() {
    let ds = small_data(13, 30, 0.2);
    let cfg = EmConfig { max_iterations: 1, rel_tolerance: 1e-14, ..Default::default() };
    let rep = fit(&ds, 1, &cfg).unwrap();
    assert!((1..=2).contains(&rep.loglik_trace.len()));
    assert!(!rep.converged);
}

fn fit_determinism() {
    let ds = small_data(14, 30, 0.2);
    let cfg = EmConfig { max_iterations: 50, seed: 4, ..Default::default() };
    let (a, b) = (fit(&ds, 2, &cfg).unwrap(), fit(&ds, 2, &cfg).unwrap());
    let bits = |t: &[f64]| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.loglik_trace), bits(&b.loglik_trace));
}

fn complete_equals_fit() {
    let ds = small_data(15, 40, 0.0);
    let cfg = EmConfig { max_iterations: 200, seed: 2, ..Default::default() };
    let (a, b) = (fit(&ds, 1, &cfg).unwrap(), fit_complete(&ds, 1, &cfg).unwrap());
    let (pa, pb) = (&a.final_params, &b.final_params);
    assert!(close(pa.loadings(), pb.loadings(), 1e-10));
    assert!((pa.means() - pb.means()).amax() < 1e-10);
    for (x, y) in pa.psi().blocks().iter().zip(pb.psi().blocks()) {
        assert!(close(x, y, 1e-10));
    }
}

fn complete_rejects_missing() {
    let values = random_matrix(&mut ChaCha8Rng::seed_from_u64(16), 5, 10);
    let mut mask = DMatrix::from_element(5, 10, true);
    mask[(3, 4)] = false;
    let ds = validate_dataset(values, mask, layout(&[2, 3])).unwrap();
    assert!(fit_complete(&ds, 1, &EmConfig::default()).is_err());
}

fn transform_centered() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mu = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
    let psi = BlockSpd::new(vec![random_spd(&mut rng, 2), random_spd(&mut rng, 3)]).unwrap();
    let p = ModelParams::new(random_matrix(&mut rng, 5, 2), mu.clone(), psi, layout(&[2, 3]), 0.5).unwrap();
    let values = DMatrix::from_fn(5, 3, |i, _| mu[i]);
    let z = transform(&p, &complete(values, &[2, 3])).unwrap();
    assert!(z.amax() < 1e-14);
}

fn transform_zero_loadings() {
    let ds = small_data(18, 8, 0.2);
    let z = transform(&zero_loading_params(&[2, 3], 2, DVector::zeros(5), 0.5), &ds).unwrap();
    assert!(z.iter().all(|&v| v == 0.0));
}

fn impute_complete() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let ds = small_data(20, 8, 0.0);
    let psi = BlockSpd::new(vec![random_spd(&mut rng, 2), random_spd(&mut rng, 3)]).unwrap();
    let p = ModelParams::new(random_matrix(&mut rng, 5, 2), DVector::zeros(5), psi, layout(&[2, 3]), 0.5).unwrap();
    assert_eq!(&impute(&p, &ds).unwrap(), ds.values());
}

fn impute_zero_loadings() {
    let ds = small_data(21, 10, 0.3);
    let mu = DVector::from_vec(vec![1., -2., 3., 0.5, 7.]);
    let x = impute(&zero_loading_params(&[2, 3], 1, mu.clone(), 0.5), &ds).unwrap();
    for i in 0..5 {
        for k in 0..10 {
            let expect = if ds.is_observed(i, k) { ds.values()[(i, k)] } else { mu[i] };
            assert!((x[(i, k)] - expect).abs() < 1e-14);
        }
    }
}

// ---- ridge ----

fn ridge_diag_identity() {
    let psi = BlockSpd::from_diagonal(&[2, 1], &[2., 3., 4.]).unwrap();
    let (d, r) = correlation_decompose(&psi).unwrap();
    assert_eq!(d.as_slice(), &[2., 3., 4.]);
    assert_eq!(r.to_dense(), DMatrix::identity(3, 3));
}

fn ridge_two_by_two() {
    let eps = 0.25;
    let psi = BlockSpd::new(vec![DMatrix::from_row_slice(2, 2, &[4., 2., 2., 1. + eps])]).unwrap();
    let (d, r) = correlation_decompose(&psi).unwrap();
    assert_eq!(d.as_slice(), &[4., 1. + eps]);
    assert!((r.block(0)[(0, 1)] - 2.0 / (4.0 * (1.0 + eps)).sqrt()).abs() < 1e-15);
}

fn ridge_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let psi = BlockSpd::new(vec![random_spd(&mut rng, 4), random_spd(&mut rng, 3)]).unwrap();
    let (d, r) = correlation_decompose(&psi).unwrap();
    let s = DMatrix::from_diagonal(&d.map(f64::sqrt));
    assert!(close(&(&s * r.to_dense() * &s), &psi.to_dense(), 1e-12));
}

fn ridge_corr_unit() {
    let r = DMatrix::from_row_slice(2, 2, &[1., 0.3, 0.3, 1.]);
    assert_eq!(ridge_correlation(&r, 1.0).unwrap(), r);
}

fn ridge_corr_identity() {
    assert_eq!(ridge_correlation(&DMatrix::identity(3, 3), 0.4).unwrap(), DMatrix::identity(3, 3));
}

fn ridge_corr_half() {
    let r = ridge_correlation(&DMatrix::from_row_slice(2, 2, &[1., 0.8, 0.8, 1.]), 0.5).unwrap();
    assert_eq!(r, DMatrix::from_row_slice(2, 2, &[1., 0.4, 0.4, 1.]));
}

fn ridge_cov_unit() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let psi = BlockSpd::new(vec![random_spd(&mut rng, 3)]).unwrap();
    assert_eq!(ridge_covariance(&psi, 1.0).unwrap().blocks(), psi.blocks());
}

fn ridge_cov_diag() {
    let psi = BlockSpd::from_diagonal(&[2], &[2., 3.]).unwrap();
    assert_eq!(ridge_covariance(&psi, 0.5).unwrap().diagonal(), vec![4., 6.]);
}

fn penalty_identity() {
    assert_eq!(ridge_penalty(&BlockSpd::identity(&[2, 3]).unwrap(), 2.0), -5.0);
}

fn penalty_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let psi = BlockSpd::new(vec![random_spd(&mut rng, 3)]).unwrap();
    let (_, r) = correlation_decompose(&psi).unwrap();
    assert_eq!(ridge_penalty(&r, 0.0), 0.0);
}

// ---- consensus and selection ----

fn consensus_single() {
    let c = consensus_matrix(&[vec![0, 1, 1, 2, 0]]).unwrap();
    assert!(c.iter().all(|&v| v == 0.0 || v == 1.0));
}

fn consensus_identical() {
    let col = vec![4, 4, 1, 2, 1];
    let c = consensus_matrix(&[col.clone(), col.clone(), col]).unwrap();
    assert!(c.iter().all(|&v| v == 0.0 || v == 1.0));
}

fn score_binary() {
    assert_eq!(consensus_score(&connectivity_matrix(&[0, 1, 0, 2])).unwrap(), 0.0);
}

fn score_quarter() {
    let mut c = DMatrix::identity(4, 4);
    c[(1, 3)] = 0.25;
    c[(3, 1)] = 0.25;
    assert_eq!(consensus_score(&c).unwrap(), -0.5);
}

fn rmse_identical() {
    let col = vec![0, 0, 1, 1, 2];
    let c = consensus_matrix(&[col.clone(), col.clone()]).unwrap();
    assert_eq!(init_rmse(&connectivity_matrix(&col), &c).unwrap(), 0.0);
}

fn rmse_complement() {
    let c = connectivity_matrix(&[0, 0, 1, 2]);
    let mut comp = c.map(|v| 1.0 - v);
    comp.fill_diagonal(1.0);
    assert_eq!(init_rmse(&comp, &c).unwrap(), 1.0);
}

fn select_single() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let values = random_matrix(&mut rng, 6, 40);
    let ds = complete(values, &[3, 3]);
    let cfg = SelectionConfig {
        candidates: vec![2],
        inits: 2,
        em: EmConfig { max_iterations: 50, ..Default::default() },
        ..Default::default()
    };
    assert_eq!(select_latent_dim(&ds, &cfg).unwrap().chosen_d, 2);
}

fn select_argmax() {
    assert_eq!(choose_dimension(&[-5.0, -1.0], &[false, false]), Some(1));
}

// ---- clustering ----

fn knn_collinear() {
    let g = knn_graph(&DMatrix::from_row_slice(1, 3, &[0., 1., 3.]), 1).unwrap();
    assert!((2..=3).contains(&g.n_edges()));
    assert!((0..3).all(|i| g.degree(i) >= 1));
    assert!(g.weight(0, 1).is_some() && g.weight(1, 2).is_some());
}

fn knn_identical() {
    let g = knn_graph(&DMatrix::from_element(2, 4, 0.7), 3).unwrap();
    assert_eq!(g.n_edges(), 6);
    assert_eq!(g.weight(0, 3), Some(1.0));
}

fn knn_degree() {
    let pts = random_matrix(&mut ChaCha8Rng::seed_from_u64(26), 3, 50);
    let g = knn_graph(&pts, 5).unwrap();
    assert!((0..50).all(|i| g.degree(i) >= 5));
}

fn louvain_cliques() {
    let mut edges = Vec::new();
    for base in [0, 5] {
        for i in 0..5 {
            for j in i + 1..5 {
                edges.push((base + i, base + j, 1.0));
            }
        }
    }
    let g = NeighborGraph::from_edges(10, &edges).unwrap();
    let p = louvain(&g, 0.8, 1).unwrap();
    let truth = Partition::from_labels(&[0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    assert_eq!(p.n_clusters(), 2);
    assert_eq!(adjusted_rand_index(&p, &truth).unwrap(), 1.0);
}

fn louvain_single() {
    let g = NeighborGraph::from_edges(1, &[]).unwrap();
    assert_eq!(louvain(&g, 0.8, 0).unwrap().n_clusters(), 1);
}

fn ari_identical() {
    let p = Partition::from_labels(&[0, 1, 1, 2, 2, 2]);
    assert_eq!(adjusted_rand_index(&p, &p).unwrap(), 1.0);
}

fn ari_relabeled() {
    let a = Partition::from_labels(&[0, 1, 1, 2, 2, 2]);
    let b = Partition::from_labels(&["z", "x", "x", "y", "y", "y"]);
    assert_eq!(adjusted_rand_index(&a, &b).unwrap(), 1.0);
}

// ---- simulation ----

fn ar1_zero() {
    assert_eq!(ar1_correlation(4, 0.0), DMatrix::identity(4, 4));
}

fn ar1_three() {
    let expect = DMatrix::from_row_slice(3, 3, &[1., 0.5, 0.25, 0.5, 1., 0.5, 0.25, 0.5, 1.]);
    assert_eq!(ar1_correlation(3, 0.5), expect);
}

fn ar1_spd() {
    assert!(ar1_correlation(50, 0.9).cholesky().is_some());
}

fn sampler_determinism() {
    let l = ar1_correlation(3, 0.5).cholesky().unwrap().unpack();
    let mean = DVector::from_vec(vec![1., 2., 3.]);
    assert_eq!(
        mvnormal_sample(&mean, &l, 20, 5).unwrap(),
        mvnormal_sample(&mean, &l, 20, 5).unwrap()
    );
}

// ---- command line ----

fn gpcca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpcca"))
        .args(args)
        .output()
        .expect("run gpcca")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small simulated data set in `dir`; returns the three modality paths.
fn small_sim(dir: &Path, missing: &str) -> Vec<PathBuf> {
    let out = dir.join("sim");
    let o = gpcca(&[
        "simulate", "--case", "A", "--rho", "0.5", "--missing", missing, "--dims", "10,10,15",
        "--cluster-size", "15", "--seed", "3", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    (1..=3).map(|r| out.join(format!("modality{r}.csv"))).collect()
}

fn cli_fit_artifacts() {
    let dir = tmp();
    let m = small_sim(dir.path(), "0.1");
    let run = dir.path().join("run1");
    let o = gpcca(&[
        "fit", "--modality", s(&m[0]), "--modality", s(&m[1]), "--d", "5", "--lambda", "0.5", "--seed", "7",
        "--out", s(&run),
    ]);
    assert!(matches!(o.status.code(), Some(0) | Some(3)), "{}", stderr(&o));
    for f in [
        "manifest.json", "loadings.csv", "means.csv", "psi_1.csv", "psi_2.csv", "embeddings.csv", "loglik.csv",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
}

fn cli_fit_mismatch() {
    let dir = tmp();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    std::fs::write(&a, "f1,f2\n1,2\n3,4\n5,6\n").unwrap();
    std::fs::write(&b, "g1,g2\n1,2\n3,4\n").unwrap();
    let o = gpcca(&["fit", "--modality", s(&a), "--modality", s(&b), "--d", "1", "--seed", "1", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("a.csv") && e.contains("b.csv"), "{e}");
}

fn cli_fit_d_zero() {
    let dir = tmp();
    let m = small_sim(dir.path(), "0");
    let o = gpcca(&["fit", "--modality", s(&m[0]), "--modality", s(&m[1]), "--d", "0", "--seed", "1", "--out", s(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("d must be ≥ 1"), "{}", stderr(&o));
}

fn cli_select_default() {
    let dir = tmp();
    let sim = dir.path().join("sim");
    let o = gpcca(&["simulate", "--case", "A", "--seed", "2", "--out", s(&sim)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mods: Vec<String> = (1..=3).map(|r| s(&sim.join(format!("modality{r}.csv"))).to_owned()).collect();
    let out = dir.path().join("sel");
    let o = gpcca(&[
        "select-d", "--modality", &mods[0], "--modality", &mods[1], "--modality", &mods[2], "--inits", "2",
        "--seed", "1", "--out", s(&out),
    ]);
    assert!(matches!(o.status.code(), Some(0) | Some(3)), "{}", stderr(&o));
    let scores = std::fs::read_to_string(out.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 7, "header plus one row per candidate");
    let sel: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("selection.json")).unwrap()).unwrap();
    assert!(sel["chosen_d"].is_u64());
}

fn cli_select_single() {
    let dir = tmp();
    let m = small_sim(dir.path(), "0.1");
    let out = dir.path().join("sel");
    let o = gpcca(&[
        "select-d", "--modality", s(&m[0]), "--modality", s(&m[1]), "--modality", s(&m[2]), "--candidates", "4",
        "--inits", "2", "--seed", "1", "--out", s(&out),
    ]);
    assert!(matches!(o.status.code(), Some(0) | Some(3)), "{}", stderr(&o));
    let sel: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("selection.json")).unwrap()).unwrap();
    assert_eq!(sel["chosen_d"], 4);
}

fn cli_select_one_init() {
    let dir = tmp();
    let m = small_sim(dir.path(), "0");
    let o = gpcca(&[
        "select-d", "--modality", s(&m[0]), "--modality", s(&m[1]), "--inits", "1", "--seed", "1", "--out",
        s(&dir.path().join("sel")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("B ≥ 2 required"), "{}", stderr(&o));
}

fn fit_model(dir: &Path, mods: &[PathBuf]) -> PathBuf {
    let run = dir.join("model");
    let mut args = vec!["fit".to_owned()];
    for m in mods {
        args.extend(["--modality".to_owned(), s(m).to_owned()]);
    }
    args.extend(["--d", "2", "--seed", "1", "--max-iter", "100", "--out", s(&run)].map(str::to_owned));
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let o = gpcca(&args);
    assert!(matches!(o.status.code(), Some(0) | Some(3)), "{}", stderr(&o));
    run
}

fn cli_impute_complete() {
    let dir = tmp();
    let m = small_sim(dir.path(), "0");
    let model = fit_model(dir.path(), &m[..2]);
    let out = dir.path().join("imputed");
    let o = gpcca(&["impute", "--model", s(&model), "--modality", s(&m[0]), "--modality", s(&m[1]), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for src in &m[..2] {
        let a = gpcca::io::read_table(src).unwrap();
        let b = gpcca::io::read_table(&out.join(src.file_name().unwrap())).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.sample_ids, b.sample_ids);
    }
}

fn cli_transform_mismatch() {
    let dir = tmp();
    let m = small_sim(dir.path(), "0");
    let model = fit_model(dir.path(), &m[..2]);
    let o = gpcca(&[
        "transform", "--model", s(&model), "--modality", s(&m[0]), "--modality", s(&m[2]), "--out",
        s(&dir.path().join("z.csv")),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

fn cli_simulate_files() {
    let dir = tmp();
    let out = dir.path().join("sim");
    let o = gpcca(&["simulate", "--case", "A", "--rho", "0.7", "--missing", "0.2", "--seed", "1", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["modality1.csv", "modality2.csv", "modality3.csv", "truth.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
}

fn cli_simulate_case_c() {
    let dir = tmp();
    let o = gpcca(&["simulate", "--case", "C", "--missing", "0.2", "--seed", "1", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Case C takes --p"), "{}", stderr(&o));
}

fn cli_simulate_determinism() {
    let dir = tmp();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = gpcca(&["simulate", "--case", "B", "--missing", "0.2", "--seed", "11", "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 4);
    for n in names {
        assert_eq!(std::fs::read(a.join(&n)).unwrap(), std::fs::read(b.join(&n)).unwrap(), "{n:?} differs");
    }
}

fn cli_evaluate_identical() {
    let dir = tmp();
    let f = dir.path().join("l.csv");
    std::fs::write(&f, "sample,label\ns1,a\ns2,a\ns3,b\ns4,c\n").unwrap();
    let o = gpcca(&["evaluate", "--pred", s(&f), "--truth", s(&f)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "1.0000");
}

fn cli_evaluate_disjoint() {
    let dir = tmp();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    std::fs::write(&a, "sample,label\ns1,a\ns2,b\n").unwrap();
    std::fs::write(&b, "sample,label\nt1,a\nt2,b\n").unwrap();
    let o = gpcca(&["evaluate", "--pred", s(&a), "--truth", s(&b)]);
    assert_eq!(o.status.code(), Some(1));
}
