//! Small graph generators for tests, benchmarks and toy experiments.

use ndarray::Array2;
use rand::Rng;

use super::{Dataset, Graph, Task};

/// `0 - 1 - ... - (n-1)` with all-ones features.
pub fn path(n: usize, f: usize) -> Graph {
    let edges = (1..n).map(|i| (i - 1, i)).collect();
    Graph::new(Array2::ones((n, f)), edges, false).expect("path is valid")
}

/// Hub `0` joined to leaves `1..=leaves`, all-ones features.
pub fn star(leaves: usize, f: usize) -> Graph {
    let edges = (1..=leaves).map(|i| (0, i)).collect();
    Graph::new(Array2::ones((leaves + 1, f)), edges, false).expect("star is valid")
}

/// Undirected G(n, p) with independent binary features of density 1/2.
pub fn erdos_renyi<R: Rng>(rng: &mut R, n: usize, p: f64, f: usize) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let features = Array2::from_shape_fn((n, f), |_| f64::from(u8::from(rng.gen_bool(0.5))));
    Graph::new(features, edges, false).expect("G(n, p) is valid")
}

/// Sparse random graph with exactly `m` distinct undirected edges, drawn
/// without building the O(n^2) candidate list.
pub fn random_sparse<R: Rng>(rng: &mut R, n: usize, m: usize, f: usize) -> Graph {
    assert!(n >= 2 && m <= n * (n - 1) / 2);
    let mut seen = std::collections::HashSet::with_capacity(m);
    let mut edges = Vec::with_capacity(m);
    while edges.len() < m {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u != v && seen.insert((u.min(v), u.max(v))) {
            edges.push((u.min(v), u.max(v)));
        }
    }
    let features = Array2::from_shape_fn((n, f), |_| f64::from(u8::from(rng.gen_bool(0.5))));
    Graph::new(features, edges, false).expect("sparse graph is valid")
}

/// Two disjoint cliques of `size` nodes; the first has features `+1` and
/// label 0, the second `-1` and label 1.
pub fn two_cliques(size: usize, f: usize) -> Graph {
    let mut edges = Vec::new();
    for block in 0..2 {
        let base = block * size;
        for u in 0..size {
            for v in (u + 1)..size {
                edges.push((base + u, base + v));
            }
        }
    }
    let features =
        Array2::from_shape_fn((2 * size, f), |(i, _)| if i < size { 1.0 } else { -1.0 });
    let labels = (0..2 * size).map(|i| usize::from(i >= size)).collect();
    Graph::new(features, edges, false)
        .and_then(|g| g.with_node_labels(labels))
        .expect("two cliques are valid")
}

/// Graph-classification toy: label 1 graphs contain a triangle, label 0 graphs
/// are paths; node features are binary.
pub fn triangle_vs_path<R: Rng>(rng: &mut R, graphs: usize, f: usize) -> Dataset {
    let list = (0..graphs)
        .map(|i| {
            let n = rng.gen_range(4..8);
            let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (v - 1, v)).collect();
            let label = i % 2;
            if label == 1 {
                edges.push((0, 2));
            }
            let features =
                Array2::from_shape_fn((n, f), |_| f64::from(u8::from(rng.gen_bool(0.5))));
            Graph::new(features, edges, false)
                .expect("toy graph is valid")
                .with_graph_label(label)
        })
        .collect();
    Dataset::new("triangle-vs-path", list, Task::Graph).expect("toy dataset is valid")
}
