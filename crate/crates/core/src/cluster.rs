//! k-nearest-neighbor graphs, Louvain community detection and the adjusted Rand index.

use std::collections::HashMap;
use std::hash::Hash;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{GpccaError, Result};

pub const DEFAULT_NEIGHBORS: usize = 20;
pub const DEFAULT_RESOLUTION: f64 = 0.8;

/// Weighted undirected graph without self-loops; adjacency lists sorted by neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl NeighborGraph {
    /// Builds a graph from undirected edges; repeated edges keep the largest weight.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(GpccaError::invalid(format!("edge ({i}, {j}) out of range for {n} nodes")));
            }
            if i == j {
                return Err(GpccaError::invalid("self-loops are not allowed"));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(GpccaError::invalid(format!("edge weight must be positive, got {w}")));
            }
            adjacency[i].push((j, w));
            adjacency[j].push((i, w));
        }
        for list in &mut adjacency {
            list.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)));
            list.dedup_by_key(|e| e.0);
        }
        Ok(Self { adjacency })
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        self.adjacency[i]
            .binary_search_by_key(&j, |e| e.0)
            .ok()
            .map(|p| self.adjacency[i][p].1)
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// The same graph with node `i` renamed `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n_nodes())?;
        let edges: Vec<_> = self
            .adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, list)| {
                list.iter()
                    .filter(move |&&(j, _)| i < j)
                    .map(move |&(j, w)| (perm[i], perm[j], w))
            })
            .collect();
        Self::from_edges(self.n_nodes(), &edges)
    }
}

fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(GpccaError::invalid("permutation length does not match node count"));
    }
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(GpccaError::invalid("not a permutation"));
        }
    }
    Ok(())
}

/// Union-symmetrized k-NN graph over the columns of `embeddings`, weight 1/(1 + distance).
/// Distance ties are broken by the smaller index; `k` is clamped to n − 1.
pub fn knn_graph(embeddings: &DMatrix<f64>, k: usize) -> Result<NeighborGraph> {
    let n = embeddings.ncols();
    if n == 0 {
        return Err(GpccaError::invalid("no points to connect"));
    }
    if embeddings.iter().any(|v| !v.is_finite()) {
        return Err(GpccaError::invalid("embeddings contain non-finite values"));
    }
    if k == 0 {
        return Err(GpccaError::invalid("neighbor count must be ≥ 1"));
    }
    let k = k.min(n - 1);
    let nearest: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = embeddings.column(i);
            let mut dist: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, (embeddings.column(j) - xi).norm()))
                .collect();
            dist.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            dist.truncate(k);
            dist
        })
        .collect();
    let edges: Vec<_> = nearest
        .iter()
        .enumerate()
        .flat_map(|(i, list)| list.iter().map(move |&(j, d)| (i, j, 1.0 / (1.0 + d))))
        .collect();
    NeighborGraph::from_edges(n, &edges)
}

/// Cluster assignment with labels 0..K−1 numbered by first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    labels: Vec<usize>,
    count: usize,
}

impl Partition {
    /// Canonicalizes arbitrary labels; only equality between them matters.
    pub fn from_labels<T: Eq + Hash + Clone>(labels: &[T]) -> Self {
        let mut ids: HashMap<T, usize> = HashMap::new();
        let labels: Vec<usize> = labels
            .iter()
            .map(|l| {
                let next = ids.len();
                *ids.entry(l.clone()).or_insert(next)
            })
            .collect();
        Self {
            count: ids.len(),
            labels,
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_clusters(&self) -> usize {
        self.count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.count];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}

/// Working graph of one Louvain level; self-loops carry intra-community weight.
struct Level {
    adjacency: Vec<Vec<(usize, f64)>>,
    loops: Vec<f64>,
}

impl Level {
    fn strength(&self, i: usize) -> f64 {
        self.loops[i] + self.adjacency[i].iter().map(|e| e.1).sum::<f64>()
    }

    fn total(&self) -> f64 {
        (0..self.loops.len()).map(|i| self.strength(i)).sum()
    }

    /// Repeated local moves in index order. Returns community ids (first-appearance
    /// numbering) and whether any node moved.
    fn local_moves(&self, resolution: f64, two_w: f64) -> (Vec<usize>, bool) {
        let n = self.loops.len();
        let strength: Vec<f64> = (0..n).map(|i| self.strength(i)).collect();
        let mut community: Vec<usize> = (0..n).collect();
        let mut total = strength.clone();
        let mut link = vec![0.0; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut moved_any = false;
        for _pass in 0..1000 {
            let mut moved = false;
            for i in 0..n {
                let own = community[i];
                touched.clear();
                touched.push(own);
                link[own] = 0.0;
                for &(j, w) in &self.adjacency[i] {
                    let c = community[j];
                    if link[c] == 0.0 && !touched.contains(&c) {
                        touched.push(c);
                    }
                    link[c] += w;
                }
                total[own] -= strength[i];
                let gain = |c: usize, link: &[f64]| link[c] - resolution * total[c] * strength[i] / two_w;
                let mut best = own;
                let mut best_gain = gain(own, &link);
                for &c in &touched[1..] {
                    let g = gain(c, &link);
                    if g > best_gain + 1e-12 {
                        best = c;
                        best_gain = g;
                    }
                }
                total[best] += strength[i];
                if best != own {
                    community[i] = best;
                    moved = true;
                }
                for &c in &touched {
                    link[c] = 0.0;
                }
            }
            if !moved {
                break;
            }
            moved_any = true;
        }
        let canon = Partition::from_labels(&community);
        (canon.labels, moved_any)
    }

    fn aggregate(&self, community: &[usize], count: usize) -> Level {
        let mut loops = vec![0.0; count];
        let mut maps: Vec<HashMap<usize, f64>> = vec![HashMap::new(); count];
        for (i, &ci) in community.iter().enumerate() {
            loops[ci] += self.loops[i];
            for &(j, w) in &self.adjacency[i] {
                let cj = community[j];
                if ci == cj {
                    loops[ci] += w;
                } else {
                    *maps[ci].entry(cj).or_insert(0.0) += w;
                }
            }
        }
        let adjacency = maps
            .into_iter()
            .map(|m| {
                let mut v: Vec<(usize, f64)> = m.into_iter().collect();
                v.sort_by_key(|e| e.0);
                v
            })
            .collect();
        Level { adjacency, loops }
    }
}

/// Louvain with nodes processed in index order. Fully deterministic.
fn louvain_canonical(graph: &NeighborGraph, resolution: f64) -> Vec<usize> {
    let n = graph.n_nodes();
    let mut level = Level {
        adjacency: graph.adjacency.clone(),
        loops: vec![0.0; n],
    };
    let two_w = level.total();
    let mut assignment: Vec<usize> = (0..n).collect();
    if two_w == 0.0 {
        return assignment;
    }
    loop {
        let (community, moved) = level.local_moves(resolution, two_w);
        if !moved {
            break;
        }
        let count = community.iter().max().map_or(0, |m| m + 1);
        for a in &mut assignment {
            *a = community[*a];
        }
        level = level.aggregate(&community, count);
    }
    assignment
}

fn check_resolution(graph: &NeighborGraph, resolution: f64) -> Result<()> {
    if graph.n_nodes() == 0 {
        return Err(GpccaError::invalid("graph has no nodes"));
    }
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(GpccaError::invalid(format!("resolution must be positive, got {resolution}")));
    }
    Ok(())
}

/// Louvain processing nodes in the order `order[0], order[1], …`.
///
/// The result depends on the graph only through the relabeled graph in which
/// `order[t]` becomes node `t`, so relabeling the input and composing `order`
/// with the same relabeling yields the same partition.
pub fn louvain_with_order(graph: &NeighborGraph, resolution: f64, order: &[usize]) -> Result<Partition> {
    check_resolution(graph, resolution)?;
    let n = graph.n_nodes();
    check_permutation(order, n)?;
    let mut rank = vec![0; n];
    for (t, &i) in order.iter().enumerate() {
        rank[i] = t;
    }
    let relabeled = graph.relabel(&rank)?;
    let labels = louvain_canonical(&relabeled, resolution);
    let original: Vec<usize> = (0..n).map(|i| labels[rank[i]]).collect();
    Ok(Partition::from_labels(&original))
}

/// Louvain with a seeded random node order.
pub fn louvain(graph: &NeighborGraph, resolution: f64, seed: u64) -> Result<Partition> {
    check_resolution(graph, resolution)?;
    let mut order: Vec<usize> = (0..graph.n_nodes()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    louvain_with_order(graph, resolution, &order)
}

/// Resolution-scaled modularity Σ_c [Σ_in/(2W) − γ(Σ_tot/(2W))²].
pub fn modularity(graph: &NeighborGraph, partition: &Partition, resolution: f64) -> Result<f64> {
    if partition.len() != graph.n_nodes() {
        return Err(GpccaError::invalid("partition size does not match graph"));
    }
    let k = partition.n_clusters();
    let mut inside = vec![0.0; k];
    let mut tot = vec![0.0; k];
    let mut two_w = 0.0;
    for i in 0..graph.n_nodes() {
        let ci = partition.labels[i];
        for &(j, w) in graph.neighbors(i) {
            two_w += w;
            tot[ci] += w;
            if partition.labels[j] == ci {
                inside[ci] += w;
            }
        }
    }
    if two_w == 0.0 {
        return Ok(0.0);
    }
    Ok((0..k)
        .map(|c| inside[c] / two_w - resolution * (tot[c] / two_w).powi(2))
        .sum())
}

/// kNN graph plus Louvain with the default settings.
pub fn cluster_embeddings(embeddings: &DMatrix<f64>, seed: u64) -> Result<Partition> {
    let graph = knn_graph(embeddings, DEFAULT_NEIGHBORS)?;
    louvain(&graph, DEFAULT_RESOLUTION, seed)
}

fn pairs(x: u64) -> f64 {
    (x * x.saturating_sub(1) / 2) as f64
}

/// Adjusted Rand index under the permutation model.
pub fn adjusted_rand_index(a: &Partition, b: &Partition) -> Result<f64> {
    if a.len() != b.len() {
        return Err(GpccaError::invalid(format!(
            "partitions have different lengths ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    for (&x, &y) in a.labels.iter().zip(&b.labels) {
        *table.entry((x, y)).or_insert(0) += 1;
    }
    let index: f64 = table.values().map(|&c| pairs(c)).sum();
    let sum_a: f64 = a.sizes().iter().map(|&c| pairs(c as u64)).sum();
    let sum_b: f64 = b.sizes().iter().map(|&c| pairs(c as u64)).sum();
    let total = pairs(a.len() as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        // Both partitions are all-singletons or both a single cluster.
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
