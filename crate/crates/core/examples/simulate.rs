//! Generate each simulation case and summarize what was masked.

use gpcca::sim::{generate, SimCase, SimSpec};

fn main() -> gpcca::Result<()> {
    for case in [SimCase::A, SimCase::B, SimCase::C, SimCase::D] {
        let mut spec = SimSpec { case, rho: 0.7, dims: vec![10, 20, 30], cluster_size: 10, seed: 3, ..Default::default() };
        match case {
            SimCase::C => spec.p = 0.1,
            _ => spec.missing_rate = 0.2,
        }
        let out = generate(&spec)?;
        let ds = &out.dataset;
        // samples that lost at least one whole modality
        let dropped = (0..ds.n_samples())
            .filter(|&k| (0..ds.layout().count()).any(|r| ds.missing_in_block(k, r).len() == ds.layout().sizes()[r]))
            .count();
        println!(
            "case {case:?}: {} samples in {} clusters, {:.1}% entries missing, {dropped} samples missing a modality{}",
            ds.n_samples(),
            out.truth.n_clusters(),
            100.0 * ds.missing_fraction(),
            if out.spd_projected { " (covariance projected to SPD)" } else { "" }
        );
    }
    Ok(())
}
