//! Command-line front end. Every command returns a process exit code:
//! 0 success, 1 input error, 2 numerical failure, 3 no convergence.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{adjusted_rand_index, knn_graph, louvain, Partition, DEFAULT_NEIGHBORS, DEFAULT_RESOLUTION};
use crate::em::{self, EmConfig, InitStrategy, MStepOrder};
use crate::error::{GpccaError, Result};
use crate::io::{default_ids, read_labels, read_table, write_labels, write_table, Table};
use crate::linalg::BlockSpd;
use crate::model::{validate_dataset, FitReport, ModalityLayout, ModelParams, ObservedDataset};
use crate::selection::{select_latent_dim, SelectionConfig, DEFAULT_INITS};
use crate::sim::{generate, SimCase, SimSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "gpcca", version, about = "Joint latent embedding of multi-modality data with missing entries")]
pub struct Cli {
    /// Worker threads (falls back to GPCCA_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Accepted for scripting compatibility; reductions are always performed in a fixed order.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model for a fixed latent dimension.
    Fit(FitArgs),
    /// Choose the latent dimension by consensus clustering over multiple initializations.
    SelectD(SelectArgs),
    /// Posterior-mean embeddings of data under a saved model.
    Transform(ApplyArgs),
    /// Fill missing entries with their conditional expectations under a saved model.
    Impute(ApplyArgs),
    /// Generate a synthetic three-modality data set with planted clusters.
    Simulate(SimulateArgs),
    /// Adjusted Rand index between two label files.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitArg {
    Random,
    Svd,
}

#[derive(Debug, Args)]
pub struct EmArgs {
    /// Modality CSV (samples as rows); repeat once per modality.
    #[arg(long = "modality", required = true)]
    pub modalities: Vec<PathBuf>,
    /// Ridge weight λ ∈ (0, 1].
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    /// Random seed; drawn from entropy and printed when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    /// Relative log-likelihood change that stops EM.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, value_enum, default_value = "random")]
    pub init: InitArg,
    /// Update every parameter from the previous iterate instead of sequentially.
    #[arg(long)]
    pub simultaneous_m_step: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub em: EmArgs,
    /// Latent dimension.
    #[arg(long)]
    pub d: usize,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub em: EmArgs,
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,6,8,10")]
    pub candidates: Vec<usize>,
    /// Initializations per candidate (B).
    #[arg(long, default_value_t = DEFAULT_INITS)]
    pub inits: usize,
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    /// Directory written by `fit` or `select-d`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "modality", required = true)]
    pub modalities: Vec<PathBuf>,
    /// Output file (transform) or directory (impute).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_case)]
    pub case: SimCase,
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    /// Entry-wise missing rate (cases A, B, D).
    #[arg(long)]
    pub missing: Option<f64>,
    /// Baseline modality-missing probability (case C).
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long, value_delimiter = ',', default_value = "60,120,180")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub cluster_size: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
}

fn parse_case(s: &str) -> std::result::Result<SimCase, String> {
    s.parse().map_err(|e: GpccaError| e.to_string())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    configure_threads(cli.threads);
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &GpccaError) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERIC
    } else {
        EXIT_INPUT
    }
}

fn configure_threads(flag: Option<usize>) {
    let threads = flag.or_else(|| std::env::var("GPCCA_THREADS").ok()?.parse().ok());
    if let Some(t) = threads.filter(|&t| t > 0) {
        // Fails only if a pool already exists, e.g. when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
}

pub fn execute(command: &Command) -> Result<i32> {
    match command {
        Command::Fit(a) => cmd_fit(a),
        Command::SelectD(a) => cmd_select_d(a),
        Command::Transform(a) => cmd_transform(a),
        Command::Impute(a) => cmd_impute(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    }
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s: u64 = rand::rng().random();
        eprintln!("seed: {s}");
        s
    })
}

/// Modality tables stacked into one data set.
pub struct Loaded {
    pub tables: Vec<Table>,
    pub dataset: ObservedDataset,
    pub sample_ids: Vec<String>,
}

pub fn load_modalities(paths: &[PathBuf]) -> Result<Loaded> {
    if paths.len() < 2 {
        return Err(GpccaError::invalid("R ≥ 2 required: pass --modality once per modality"));
    }
    let tables = paths.iter().map(|p| read_table(p)).collect::<Result<Vec<_>>>()?;
    let first = &tables[0];
    for t in &tables[1..] {
        if t.n_rows() != first.n_rows() {
            return Err(GpccaError::invalid(format!(
                "row count mismatch: {} has {} samples, {} has {}",
                first.path.display(),
                first.n_rows(),
                t.path.display(),
                t.n_rows()
            )));
        }
        if let (Some(a), Some(b)) = (&first.sample_ids, &t.sample_ids) {
            if a != b {
                return Err(GpccaError::invalid(format!(
                    "sample IDs of {} and {} differ (rows must be aligned)",
                    first.path.display(),
                    t.path.display()
                )));
            }
        }
    }
    let sample_ids = tables
        .iter()
        .find_map(|t| t.sample_ids.clone())
        .unwrap_or_else(|| default_ids(first.n_rows()));
    let layout = ModalityLayout::new(tables.iter().map(|t| t.feature_names.len()).collect())?;
    let m = layout.total();
    let n = first.n_rows();
    let mut values = DMatrix::zeros(m, n);
    let mut mask = DMatrix::from_element(m, n, false);
    for (r, t) in tables.iter().enumerate() {
        let off = layout.offsets()[r];
        values.rows_mut(off, t.feature_names.len()).copy_from(&t.values.transpose());
        mask.rows_mut(off, t.feature_names.len()).copy_from(&t.observed.transpose());
    }
    let dataset = validate_dataset(values, mask, layout)?;
    Ok(Loaded {
        tables,
        dataset,
        sample_ids,
    })
}

/// Contents of `manifest.json` in a model directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub command: String,
    pub latent_dim: usize,
    pub lambda: f64,
    pub modality_sizes: Vec<usize>,
    pub modality_files: Vec<String>,
    pub feature_names: Vec<Vec<String>>,
    pub seed: u64,
    pub init: InitStrategy,
    pub m_step_order: MStepOrder,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_loglik: f64,
    pub final_unpenalized_loglik: f64,
    pub n_samples: usize,
    pub missing_fraction: f64,
}

const MANIFEST_FORMAT: &str = "gpcca-model/1";

fn em_config(a: &EmArgs, seed: u64) -> EmConfig {
    EmConfig {
        max_iterations: a.max_iter,
        rel_tolerance: a.tol,
        ridge_lambda: a.lambda,
        seed,
        init_strategy: match a.init {
            InitArg::Random => InitStrategy::RandomOrthonormal,
            InitArg::Svd => InitStrategy::MeanImputedSvd,
        },
        m_step_order: if a.simultaneous_m_step {
            MStepOrder::Simultaneous
        } else {
            MStepOrder::Sequential
        },
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| GpccaError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable value");
    fs::write(path, text + "\n").map_err(|source| GpccaError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn latent_header(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("z{j}")).collect()
}

fn all_features(loaded: &Loaded) -> Vec<String> {
    loaded
        .tables
        .iter()
        .flat_map(|t| t.feature_names.iter().cloned())
        .collect()
}

/// Writes parameters, embeddings, clusters and the log-likelihood trace.
#[allow(clippy::too_many_arguments)]
fn write_model(
    out: &Path,
    command: &str,
    loaded: &Loaded,
    paths: &[PathBuf],
    config: &EmConfig,
    report: &FitReport,
    clustering: &Partition,
) -> Result<()> {
    create_dir(out)?;
    let params = &report.final_params;
    let d = params.latent_dim();
    let features = all_features(loaded);
    write_table(
        &out.join("loadings.csv"),
        "feature",
        Some(&features),
        &latent_header(d),
        params.loadings(),
    )?;
    write_table(
        &out.join("means.csv"),
        "feature",
        Some(&features),
        &["mean".to_owned()],
        &DMatrix::from_column_slice(features.len(), 1, params.means().as_slice()),
    )?;
    for (r, t) in loaded.tables.iter().enumerate() {
        write_table(
            &out.join(format!("psi_{}.csv", r + 1)),
            "feature",
            Some(&t.feature_names),
            &t.feature_names,
            params.psi().block(r),
        )?;
    }
    write_table(
        &out.join("embeddings.csv"),
        "sample",
        Some(&loaded.sample_ids),
        &latent_header(d),
        &report.embeddings().transpose(),
    )?;
    write_labels(&out.join("clusters.csv"), &loaded.sample_ids, clustering.labels())?;
    let trace = DMatrix::from_fn(report.loglik_trace.len(), 2, |i, j| {
        if j == 0 {
            report.loglik_trace[i]
        } else {
            report.unpenalized_trace[i]
        }
    });
    let iters: Vec<String> = (0..trace.nrows()).map(|i| i.to_string()).collect();
    write_table(
        &out.join("loglik.csv"),
        "iteration",
        Some(&iters),
        &["penalized".to_owned(), "unpenalized".to_owned()],
        &trace,
    )?;
    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_owned(),
        command: command.to_owned(),
        latent_dim: d,
        lambda: config.ridge_lambda,
        modality_sizes: params.layout().sizes().to_vec(),
        modality_files: paths.iter().map(|p| p.display().to_string()).collect(),
        feature_names: loaded.tables.iter().map(|t| t.feature_names.clone()).collect(),
        seed: config.seed,
        init: config.init_strategy,
        m_step_order: config.m_step_order,
        max_iterations: config.max_iterations,
        tolerance: config.rel_tolerance,
        iterations: report.iterations,
        converged: report.converged,
        final_loglik: report.final_loglik(),
        final_unpenalized_loglik: *report.unpenalized_trace.last().unwrap(),
        n_samples: loaded.dataset.n_samples(),
        missing_fraction: loaded.dataset.missing_fraction(),
    };
    write_json(&out.join("manifest.json"), &manifest)
}

fn cluster(report: &FitReport, seed: u64) -> Result<Partition> {
    let graph = knn_graph(report.embeddings(), DEFAULT_NEIGHBORS)?;
    louvain(&graph, DEFAULT_RESOLUTION, seed)
}

fn convergence_code(report: &FitReport) -> i32 {
    if report.converged {
        EXIT_OK
    } else {
        eprintln!("warning: no convergence after {} iterations", report.iterations);
        EXIT_NO_CONVERGENCE
    }
}

pub fn cmd_fit(a: &FitArgs) -> Result<i32> {
    if a.d < 1 {
        return Err(GpccaError::invalid("d must be ≥ 1"));
    }
    let loaded = load_modalities(&a.em.modalities)?;
    let seed = resolve_seed(a.em.seed);
    let config = em_config(&a.em, seed);
    config.validate()?;
    let report = if loaded.dataset.is_complete() {
        em::fit_complete(&loaded.dataset, a.d, &config)?
    } else {
        em::fit(&loaded.dataset, a.d, &config)?
    };
    let clustering = cluster(&report, seed)?;
    write_model(&a.em.out, "fit", &loaded, &a.em.modalities, &config, &report, &clustering)?;
    println!(
        "d = {}, iterations = {}, log-likelihood = {}",
        a.d,
        report.iterations,
        report.final_loglik()
    );
    Ok(convergence_code(&report))
}

#[derive(Serialize)]
struct SelectionSummary {
    chosen_d: usize,
    chosen_init: usize,
    chosen_seed: u64,
    inits: usize,
    candidates: Vec<CandidateSummary>,
}

#[derive(Serialize)]
struct CandidateSummary {
    d: usize,
    score: Option<f64>,
    failures: usize,
    disqualified: bool,
    rmse: Vec<Option<f64>>,
}

pub fn cmd_select_d(a: &SelectArgs) -> Result<i32> {
    if a.inits < 2 {
        return Err(GpccaError::invalid("B ≥ 2 required"));
    }
    let loaded = load_modalities(&a.em.modalities)?;
    let seed = resolve_seed(a.em.seed);
    let config = SelectionConfig {
        candidates: a.candidates.clone(),
        inits: a.inits,
        em: em_config(&a.em, seed),
        ..Default::default()
    };
    let sel = select_latent_dim(&loaded.dataset, &config)?;
    let best = sel.best_fit();
    let em = EmConfig {
        seed: best.seed,
        ..config.em.clone()
    };
    write_model(&a.em.out, "select-d", &loaded, &a.em.modalities, &em, &best.fit, &best.clustering)?;

    let finite = |v: f64| v.is_finite().then_some(v);
    let summary = SelectionSummary {
        chosen_d: sel.chosen_d,
        chosen_init: sel.chosen_init,
        chosen_seed: best.seed,
        inits: a.inits,
        candidates: sel
            .candidates
            .iter()
            .map(|c| CandidateSummary {
                d: c.d,
                score: finite(c.score),
                failures: c.failures(),
                disqualified: c.disqualified,
                rmse: c.rmse.iter().map(|&v| finite(v)).collect(),
            })
            .collect(),
    };
    write_json(&a.em.out.join("selection.json"), &summary)?;
    let scores = DMatrix::from_fn(sel.candidates.len(), 2, |i, j| {
        let c = &sel.candidates[i];
        if j == 0 {
            c.score
        } else {
            c.failures() as f64
        }
    });
    let ds: Vec<String> = sel.candidates.iter().map(|c| c.d.to_string()).collect();
    write_table(
        &a.em.out.join("scores.csv"),
        "d",
        Some(&ds),
        &["score".to_owned(), "failures".to_owned()],
        &scores.map(|v| if v.is_finite() { v } else { f64::NAN }),
    )?;
    println!("chosen d = {}, init = {}", sel.chosen_d, sel.chosen_init);
    Ok(convergence_code(&best.fit))
}

fn read_matrix(path: &Path) -> Result<Table> {
    let t = read_table(path)?;
    if t.observed.iter().any(|&o| !o) {
        return Err(GpccaError::Parse {
            path: path.to_path_buf(),
            line: None,
            message: "model files may not contain missing entries".into(),
        });
    }
    Ok(t)
}

/// Reads a model directory written by `fit` or `select-d`.
pub fn load_model(dir: &Path) -> Result<(Manifest, ModelParams)> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|source| GpccaError::Io {
        path: path.clone(),
        source,
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| GpccaError::Parse {
        path: path.clone(),
        line: Some(e.line()),
        message: e.to_string(),
    })?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(GpccaError::Parse {
            path,
            line: None,
            message: format!("unsupported format '{}'", manifest.format),
        });
    }
    let layout = ModalityLayout::new(manifest.modality_sizes.clone())?;
    let w = read_matrix(&dir.join("loadings.csv"))?.values;
    let mu = read_matrix(&dir.join("means.csv"))?.values;
    let blocks = (1..=layout.count())
        .map(|r| read_matrix(&dir.join(format!("psi_{r}.csv"))).map(|t| t.values))
        .collect::<Result<Vec<_>>>()?;
    if mu.ncols() != 1 {
        return Err(GpccaError::invalid("means.csv must have one value column"));
    }
    let params = ModelParams::new(
        w,
        DVector::from_column_slice(mu.as_slice()),
        BlockSpd::new(blocks)?,
        layout,
        manifest.lambda,
    )?;
    Ok((manifest, params))
}

fn load_for_model(a: &ApplyArgs) -> Result<(Loaded, ModelParams)> {
    let (_, params) = load_model(&a.model)?;
    let loaded = load_modalities(&a.modalities)?;
    if loaded.dataset.layout() != params.layout() {
        return Err(GpccaError::invalid(format!(
            "modality sizes {:?} do not match the model's {:?}",
            loaded.dataset.layout().sizes(),
            params.layout().sizes()
        )));
    }
    Ok((loaded, params))
}

pub fn cmd_transform(a: &ApplyArgs) -> Result<i32> {
    let (loaded, params) = load_for_model(a)?;
    let z = em::transform(&params, &loaded.dataset)?;
    write_table(
        &a.out,
        "sample",
        Some(&loaded.sample_ids),
        &latent_header(params.latent_dim()),
        &z.transpose(),
    )?;
    Ok(EXIT_OK)
}

pub fn cmd_impute(a: &ApplyArgs) -> Result<i32> {
    let (loaded, params) = load_for_model(a)?;
    let completed = em::impute(&params, &loaded.dataset)?;
    create_dir(&a.out)?;
    let layout = params.layout();
    for (r, t) in loaded.tables.iter().enumerate() {
        let range = layout.range(r);
        let name = t
            .path
            .file_name()
            .map(|f| f.to_os_string())
            .unwrap_or_else(|| format!("modality_{}.csv", r + 1).into());
        write_table(
            &a.out.join(name),
            "sample",
            Some(&loaded.sample_ids),
            &t.feature_names,
            &completed.rows(range.start, range.len()).transpose(),
        )?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<i32> {
    let spec = match a.case {
        SimCase::C if a.missing.is_some() => return Err(GpccaError::invalid("Case C takes --p")),
        SimCase::A | SimCase::B | SimCase::D if a.p.is_some() => {
            return Err(GpccaError::invalid(format!("Case {:?} takes --missing", a.case)))
        }
        _ => SimSpec {
            case: a.case,
            rho: a.rho,
            missing_rate: a.missing.unwrap_or(0.0),
            p: a.p.unwrap_or(0.0),
            dims: a.dims.clone(),
            cluster_size: a.cluster_size,
            seed: resolve_seed(a.seed),
        },
    };
    let out = generate(&spec)?;
    create_dir(&a.out)?;
    let ids = default_ids(spec.n_samples());
    let layout = out.dataset.layout();
    for r in 0..layout.count() {
        let range = layout.range(r);
        let header: Vec<String> = (1..=range.len()).map(|i| format!("m{}_f{i}", r + 1)).collect();
        let block = DMatrix::from_fn(out.dataset.n_samples(), range.len(), |k, i| {
            let f = range.start + i;
            if out.dataset.is_observed(f, k) {
                out.dataset.values()[(f, k)]
            } else {
                f64::NAN
            }
        });
        write_table(&a.out.join(format!("modality{}.csv", r + 1)), "sample", Some(&ids), &header, &block)?;
    }
    write_labels(&a.out.join("truth.csv"), &ids, out.truth.labels())?;
    if let Some(h) = &out.hidden {
        write_table(
            &a.out.join("hidden.csv"),
            "sample",
            Some(&ids),
            &["h".to_owned()],
            &DMatrix::from_column_slice(h.len(), 1, h.as_slice()),
        )?;
    }
    write_json(&a.out.join("spec.json"), &spec)?;
    Ok(EXIT_OK)
}

/// ARI between two label files matched by sample ID.
pub fn evaluate_files(pred: &Path, truth: &Path) -> Result<f64> {
    let p = read_labels(pred)?;
    let t: std::collections::HashMap<String, String> = read_labels(truth)?.into_iter().collect();
    let (a, b): (Vec<String>, Vec<String>) = p
        .into_iter()
        .filter_map(|(id, l)| t.get(&id).map(|tl| (l, tl.clone())))
        .unzip();
    if a.is_empty() {
        return Err(GpccaError::invalid(format!(
            "{} and {} share no sample IDs",
            pred.display(),
            truth.display()
        )));
    }
    if a.len() != t.len() {
        log::warn!("{} of {} truth samples matched", a.len(), t.len());
    }
    adjusted_rand_index(&Partition::from_labels(&a), &Partition::from_labels(&b))
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<i32> {
    let ari = evaluate_files(&a.pred, &a.truth)?;
    println!("{ari:.4}");
    Ok(EXIT_OK)
}
