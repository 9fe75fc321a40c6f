use super::Graph;
use crate::error::{Error, Result};

/// Induced subgraph with maps back to the parent graph.
#[derive(Debug, Clone)]
pub struct Subgraph {
    pub graph: Graph,
    /// `nodes[local]` is the parent index of local node `local`; ascending.
    pub nodes: Vec<usize>,
    /// `edges[local]` is the parent edge index of local edge `local`.
    pub edges: Vec<usize>,
    /// Local index of the center node.
    pub center: usize,
}

/// Nodes within `k` undirected hops of `center`, all edges among them, in
/// parent order.
pub fn extract_khop_subgraph(graph: &Graph, center: usize, k: usize) -> Result<Subgraph> {
    let n = graph.node_count();
    if center >= n {
        return Err(Error::Index {
            index: center,
            bound: n,
            context: "k-hop center".into(),
        });
    }
    let dist = graph.hop_distances(center);
    let mut local = vec![usize::MAX; n];
    let mut nodes = Vec::new();
    for (v, d) in dist.iter().enumerate() {
        if d.is_some_and(|d| d <= k) {
            local[v] = nodes.len();
            nodes.push(v);
        }
    }
    let mut features = ndarray::Array2::zeros((nodes.len(), graph.feature_dim()));
    for (i, &v) in nodes.iter().enumerate() {
        features.row_mut(i).assign(&graph.features.row(v));
    }
    let mut edges = Vec::new();
    let mut local_edges = Vec::new();
    for (e, &(u, v)) in graph.edges().iter().enumerate() {
        if local[u] != usize::MAX && local[v] != usize::MAX {
            edges.push(e);
            local_edges.push((local[u], local[v]));
        }
    }
    let mut sub = Graph::new(features, local_edges, graph.is_directed())?;
    if let Some(labels) = &graph.node_labels {
        sub.node_labels = Some(nodes.iter().map(|&v| labels[v]).collect());
    }
    sub.graph_label = graph.graph_label;
    Ok(Subgraph {
        graph: sub,
        center: local[center],
        nodes,
        edges,
    })
}
