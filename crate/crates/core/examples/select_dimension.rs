//! Choose the latent dimension by consensus clustering over random restarts.
//!
//! Each candidate d is fitted from several initializations; the embeddings are
//! clustered and the candidate whose clusterings agree most is kept.

use gpcca::selection::{select_latent_dim, SelectionConfig};
use gpcca::sim::{generate, SimCase, SimSpec};
use gpcca::{adjusted_rand_index, EmConfig};

fn main() -> gpcca::Result<()> {
    let sim = generate(&SimSpec {
        case: SimCase::A,
        rho: 0.3,
        missing_rate: 0.1,
        dims: vec![30, 30, 30],
        cluster_size: 100,
        seed: 11,
        ..Default::default()
    })?;
    let config = SelectionConfig {
        candidates: vec![2, 3, 4],
        inits: 3,
        em: EmConfig { ridge_lambda: 2.0 / 3.0, seed: 5, max_iterations: 200, ..Default::default() },
        ..Default::default()
    };
    let sel = select_latent_dim(&sim.dataset, &config)?;
    for c in &sel.candidates {
        println!("d = {}: consensus score {:.1}, {} failed fits", c.d, c.score, c.failures());
    }
    let best = sel.best_fit();
    println!(
        "chosen d = {} (init {}), {} clusters, ARI vs truth {:.3}",
        sel.chosen_d,
        sel.chosen_init,
        best.clustering.n_clusters(),
        adjusted_rand_index(&best.clustering, &sim.truth)?
    );
    Ok(())
}
