//! Fit a two-factor model to three modalities with 20% of entries missing.
//!
//! ```text
//! cargo run --release --example fit_missing
//! ```

use gpcca::sim::{generate, SimCase, SimSpec};
use gpcca::{fit, EmConfig};

fn main() -> gpcca::Result<()> {
    let spec = SimSpec {
        case: SimCase::A,
        rho: 0.5,
        missing_rate: 0.2,
        dims: vec![10, 15, 20],
        cluster_size: 20,
        seed: 7,
        ..Default::default()
    };
    let data = generate(&spec)?.dataset;
    println!(
        "{} features × {} samples, {:.1}% missing",
        data.n_features(),
        data.n_samples(),
        100.0 * data.missing_fraction()
    );

    let config = EmConfig { ridge_lambda: 2.0 / 3.0, seed: 1, ..Default::default() };
    let report = fit(&data, 2, &config)?;
    println!(
        "{} iterations, converged: {}, penalized log-likelihood {:.3}",
        report.iterations,
        report.converged,
        report.final_loglik()
    );
    for (r, block) in report.final_params.psi().blocks().iter().enumerate() {
        println!("modality {r}: mean error variance {:.3}", block.diagonal().mean());
    }
    Ok(())
}
