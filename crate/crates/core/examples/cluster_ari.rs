//! kNN graph + Louvain on toy embeddings, scored with the adjusted Rand index.

use gpcca::cluster::{knn_graph, louvain, modularity};
use gpcca::{adjusted_rand_index, Partition};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> gpcca::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let centers = [(0.0, 0.0), (6.0, 0.0), (3.0, 5.0)];
    let n = 90;
    let truth: Vec<usize> = (0..n).map(|k| k % 3).collect();
    let points = DMatrix::from_fn(2, n, |r, k| {
        let c = centers[truth[k]];
        (if r == 0 { c.0 } else { c.1 }) + rng.random_range(-1.5..1.5)
    });

    let graph = knn_graph(&points, 10)?;
    let found = louvain(&graph, 0.8, 1)?;
    let truth = Partition::from_labels(&truth);
    println!("{} edges, {} communities with sizes {:?}", graph.n_edges(), found.n_clusters(), found.sizes());
    println!("modularity {:.3}", modularity(&graph, &found, 0.8)?);
    println!("ARI vs planted clusters {:.3}", adjusted_rand_index(&found, &truth)?);
    Ok(())
}
