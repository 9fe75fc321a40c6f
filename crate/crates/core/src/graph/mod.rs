//! Graphs, datasets and feature bounds.
//!
//! Undirected graphs store each edge once. Everything that does message
//! passing works on [`EdgeView`], the expanded list in which an undirected
//! edge `k = (u, v)` contributes the two directed slots `2k = u -> v` and
//! `2k + 1 = v -> u`, both owned by `k`.

pub mod io;
pub mod subgraph;
pub mod synthetic;

use std::collections::{HashSet, VecDeque};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_dataset, parse_dataset, save_dataset, write_dataset, DatasetFormat};
pub use subgraph::{extract_khop_subgraph, Subgraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Node,
    Graph,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Node => "node",
            Task::Graph => "graph",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "node" => Ok(Task::Node),
            "graph" => Ok(Task::Graph),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub features: Array2<f64>,
    edges: Vec<(usize, usize)>,
    directed: bool,
    pub node_labels: Option<Vec<usize>>,
    pub graph_label: Option<usize>,
}

impl Graph {
    /// Validates endpoints, duplicates and self-loops. For undirected graphs
    /// `(u, v)` and `(v, u)` are the same edge.
    pub fn new(features: Array2<f64>, edges: Vec<(usize, usize)>, directed: bool) -> Result<Self> {
        let n = features.nrows();
        let mut seen = HashSet::with_capacity(edges.len());
        for &(u, v) in &edges {
            for endpoint in [u, v] {
                if endpoint >= n {
                    return Err(Error::Index {
                        index: endpoint,
                        bound: n,
                        context: format!("edge ({u}, {v})"),
                    });
                }
            }
            if u == v {
                return Err(Error::Graph(format!(
                    "self-loop ({u}, {u}) in edge list; self-loops are added internally"
                )));
            }
            let key = if directed { (u, v) } else { (u.min(v), u.max(v)) };
            if !seen.insert(key) {
                return Err(Error::Graph(format!("duplicate edge ({u}, {v})")));
            }
        }
        Ok(Self {
            features,
            edges,
            directed,
            node_labels: None,
            graph_label: None,
        })
    }

    pub fn with_node_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.node_count() {
            return Err(Error::dim(format!(
                "{} node labels for {} nodes",
                labels.len(),
                self.node_count()
            )));
        }
        self.node_labels = Some(labels);
        Ok(self)
    }

    pub fn with_graph_label(mut self, label: usize) -> Self {
        self.graph_label = Some(label);
        self
    }

    pub fn node_count(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn edge_view(&self) -> EdgeView {
        EdgeView::new(self.node_count(), &self.edges, self.directed)
    }

    /// Undirected adjacency lists (direction ignored), neighbours in edge order.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count()];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        adj
    }

    /// Hop distance from `source` ignoring direction; `None` when unreachable.
    pub fn hop_distances(&self, source: usize) -> Vec<Option<usize>> {
        let adj = self.adjacency();
        let mut dist = vec![None; self.node_count()];
        let mut queue = VecDeque::new();
        if source < dist.len() {
            dist[source] = Some(0);
            queue.push_back(source);
        }
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            for &v in &adj[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Largest finite hop distance over all node pairs.
    pub fn diameter(&self) -> usize {
        (0..self.node_count())
            .flat_map(|s| self.hop_distances(s).into_iter().flatten())
            .max()
            .unwrap_or(0)
    }

    /// Copy keeping only the edges whose mask entry is true.
    pub fn retain_edges(&self, keep: &[bool]) -> Result<Graph> {
        if keep.len() != self.edges.len() {
            return Err(Error::dim(format!(
                "edge mask of length {} for {} edges",
                keep.len(),
                self.edges.len()
            )));
        }
        let edges = self
            .edges
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(&e, _)| e)
            .collect();
        Ok(Graph {
            features: self.features.clone(),
            edges,
            directed: self.directed,
            node_labels: self.node_labels.clone(),
            graph_label: self.graph_label,
        })
    }

    pub fn with_features(&self, features: Array2<f64>) -> Result<Graph> {
        if features.dim() != self.features.dim() {
            return Err(Error::dim(format!(
                "feature matrix {:?} does not match graph {:?}",
                features.dim(),
                self.features.dim()
            )));
        }
        Ok(Graph {
            features,
            ..self.clone()
        })
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permute_nodes(&self, perm: &[usize]) -> Result<Graph> {
        let n = self.node_count();
        if perm.len() != n {
            return Err(Error::dim("permutation length"));
        }
        let mut features = Array2::zeros(self.features.dim());
        for (old, &new) in perm.iter().enumerate() {
            features.row_mut(new).assign(&self.features.row(old));
        }
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let mut out = Graph::new(features, edges, self.directed)?;
        if let Some(labels) = &self.node_labels {
            let mut permuted = vec![0; n];
            for (old, &new) in perm.iter().enumerate() {
                permuted[new] = labels[old];
            }
            out.node_labels = Some(permuted);
        }
        out.graph_label = self.graph_label;
        Ok(out)
    }
}

/// Directed message slots derived from a graph's edge list.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeView {
    pub node_count: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// Index into the owning graph's edge list for every slot.
    pub owner: Vec<usize>,
}

impl EdgeView {
    pub fn new(node_count: usize, edges: &[(usize, usize)], directed: bool) -> Self {
        let cap = if directed { edges.len() } else { 2 * edges.len() };
        let mut view = EdgeView {
            node_count,
            src: Vec::with_capacity(cap),
            dst: Vec::with_capacity(cap),
            owner: Vec::with_capacity(cap),
        };
        for (k, &(u, v)) in edges.iter().enumerate() {
            view.src.push(u);
            view.dst.push(v);
            view.owner.push(k);
            if !directed {
                view.src.push(v);
                view.dst.push(u);
                view.owner.push(k);
            }
        }
        view
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Broadcasts one value per owning edge onto the directed slots.
    pub fn broadcast(&self, per_edge: &[f64]) -> Vec<f64> {
        self.owner.iter().map(|&k| per_edge[k]).collect()
    }

    /// Sums per-slot values back onto their owning edges.
    pub fn accumulate(&self, per_slot: &[f64], edge_count: usize) -> Vec<f64> {
        let mut out = vec![0.0; edge_count];
        for (&k, &g) in self.owner.iter().zip(per_slot) {
            out[k] += g;
        }
        out
    }
}

/// Per-column discreteness and value bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub discrete: Vec<bool>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl FeatureSpec {
    pub fn new(discrete: Vec<bool>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let f = discrete.len();
        if lower.len() != f || upper.len() != f {
            return Err(Error::dim(format!(
                "feature spec lengths {} / {} / {}",
                f,
                lower.len(),
                upper.len()
            )));
        }
        if let Some(j) = (0..f).find(|&j| !(lower[j] <= upper[j])) {
            return Err(Error::Config(format!(
                "feature {j}: lower bound {} exceeds upper bound {}",
                lower[j], upper[j]
            )));
        }
        Ok(Self {
            discrete,
            lower,
            upper,
        })
    }

    pub fn dim(&self) -> usize {
        self.discrete.len()
    }

    pub fn is_continuous(&self, j: usize) -> bool {
        !self.discrete[j]
    }

    pub fn contains(&self, features: &Array2<f64>) -> bool {
        features.ncols() == self.dim()
            && features.rows().into_iter().all(|row| {
                row.iter()
                    .enumerate()
                    .all(|(j, &x)| x >= self.lower[j] && x <= self.upper[j])
            })
    }
}

#[derive(Debug, Clone)]
pub enum DiscreteDetection {
    /// A column is discrete iff every observed value is integral.
    Auto,
    Explicit(Vec<bool>),
}

/// Columnwise bounds over every node of every graph, plus discrete masks.
pub fn infer_feature_spec(graphs: &[Graph], detection: DiscreteDetection) -> Result<FeatureSpec> {
    let f = graphs
        .first()
        .map(Graph::feature_dim)
        .ok_or_else(|| Error::Config("cannot infer a feature spec from an empty dataset".into()))?;
    let mut lower = vec![f64::INFINITY; f];
    let mut upper = vec![f64::NEG_INFINITY; f];
    let mut integral = vec![true; f];
    let mut any_row = false;
    for g in graphs {
        if g.feature_dim() != f {
            return Err(Error::dim(format!(
                "graph has {} features, expected {f}",
                g.feature_dim()
            )));
        }
        for row in g.features.rows() {
            any_row = true;
            for (j, &x) in row.iter().enumerate() {
                lower[j] = lower[j].min(x);
                upper[j] = upper[j].max(x);
                integral[j] &= x.fract() == 0.0;
            }
        }
    }
    if !any_row {
        lower.iter_mut().for_each(|v| *v = 0.0);
        upper.iter_mut().for_each(|v| *v = 0.0);
    }
    let discrete = match detection {
        DiscreteDetection::Auto => integral,
        DiscreteDetection::Explicit(mask) => {
            if mask.len() != f {
                return Err(Error::dim(format!(
                    "explicit mask of length {} for {f} features",
                    mask.len()
                )));
            }
            mask
        }
    };
    FeatureSpec::new(discrete, lower, upper)
}

/// One explainable unit: a node of a graph (node task) or a whole graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InstanceRef {
    pub graph: usize,
    pub node: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub task: Task,
    pub feature_spec: FeatureSpec,
    /// Fold index per instance, in [`Dataset::instances`] order.
    pub folds: Option<Vec<usize>>,
}

impl Dataset {
    /// Checks the dataset invariants and infers the feature spec automatically.
    pub fn new(name: impl Into<String>, graphs: Vec<Graph>, task: Task) -> Result<Self> {
        let feature_spec = infer_feature_spec(&graphs, DiscreteDetection::Auto)?;
        let dataset = Self {
            name: name.into(),
            graphs,
            task,
            feature_spec,
            folds: None,
        };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.feature_spec.dim();
        for (i, g) in self.graphs.iter().enumerate() {
            if g.feature_dim() != f {
                return Err(Error::dim(format!(
                    "graph {i} has {} features, expected {f}",
                    g.feature_dim()
                )));
            }
            match self.task {
                Task::Node if g.node_labels.is_none() => {
                    return Err(Error::Graph(format!("graph {i} lacks node labels")))
                }
                Task::Graph if g.graph_label.is_none() => {
                    return Err(Error::Graph(format!("graph {i} lacks a graph label")))
                }
                _ => {}
            }
        }
        if let Some(folds) = &self.folds {
            let count = self.instances().len();
            if folds.len() != count {
                return Err(Error::dim(format!(
                    "{} fold assignments for {count} instances",
                    folds.len()
                )));
            }
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_spec.dim()
    }

    pub fn instances(&self) -> Vec<InstanceRef> {
        match self.task {
            Task::Node => self
                .graphs
                .iter()
                .enumerate()
                .flat_map(|(gi, g)| {
                    (0..g.node_count()).map(move |v| InstanceRef {
                        graph: gi,
                        node: Some(v),
                    })
                })
                .collect(),
            Task::Graph => (0..self.graphs.len())
                .map(|gi| InstanceRef {
                    graph: gi,
                    node: None,
                })
                .collect(),
        }
    }

    pub fn label_of(&self, instance: InstanceRef) -> Option<usize> {
        let g = self.graphs.get(instance.graph)?;
        match instance.node {
            Some(v) => g.node_labels.as_ref().and_then(|l| l.get(v).copied()),
            None => g.graph_label,
        }
    }

    pub fn class_count(&self) -> usize {
        self.instances()
            .into_iter()
            .filter_map(|i| self.label_of(i))
            .max()
            .map_or(0, |c| c + 1)
    }
}
