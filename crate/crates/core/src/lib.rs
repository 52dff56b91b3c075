//! Generalized probabilistic canonical correlation analysis (GPCCA).
//!
//! Several modalities measured on the same samples are modeled as
//! `x = W z + μ + ε`, with a shared latent factor `z ~ N(0, I_d)` and an error
//! covariance `Ψ` that is block diagonal across modalities. Parameters are fitted
//! by EM directly on data with missing entries (single features or whole
//! modalities), with ridge shrinkage of the within-modality error correlation.
//!
//! * [`em`] — fitting, embedding and imputation.
//! * [`selection`] — consensus-clustering choice of the latent dimension.
//! * [`cluster`] — kNN graphs, Louvain, adjusted Rand index.
//! * [`sim`] — synthetic multi-modality data with planted clusters.
//! * [`cli`] / [`io`] — the `gpcca` command and its CSV/JSON formats.

pub mod cli;
pub mod cluster;
pub mod em;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod ridge;
pub mod selection;
pub mod sim;

pub use cluster::{adjusted_rand_index, Partition};
pub use em::{fit, fit_complete, impute, transform, EmConfig, InitStrategy, MStepOrder};
pub use error::{GpccaError, Result};
pub use linalg::BlockSpd;
pub use model::{
    stack_modalities, validate_dataset, FitReport, LatentPosterior, ModalityLayout, ModelParams,
    ObservedDataset,
};
pub use selection::{select_latent_dim, SelectionConfig};
