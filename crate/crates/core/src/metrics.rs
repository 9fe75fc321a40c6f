//! Evaluation measures and their aggregation across folds.
//!
//! A metric with empty support is `None` and is rendered as `n.d.`.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::ExplanationResult;
use crate::gnn::{Oracle, Target};
use crate::graph::{Dataset, Graph};

/// One attempted instance together with its outcome.
#[derive(Debug, Clone, Copy)]
pub struct Evaluated<'a> {
    pub factual: &'a Graph,
    pub target: Target,
    /// Ground-truth label of the instance.
    pub label: usize,
    pub result: &'a ExplanationResult,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.into_iter().fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Fraction of results that found a counterfactual.
pub fn validity(results: &[&ExplanationResult]) -> Option<f64> {
    mean(results.iter().map(|r| f64::from(u8::from(r.found))))
}

/// Mean of `1[f(G) = y] - 1[f(G') = y]` over found counterfactuals.
pub fn fidelity(oracle: &Oracle, items: &[Evaluated<'_>]) -> Result<Option<f64>> {
    let mut per_instance = Vec::new();
    for item in items {
        let Some(cf) = item.result.counterfactual.as_ref().filter(|_| item.result.found) else {
            continue;
        };
        let factual_right = item.result.factual_prediction == item.label;
        let cf_right = oracle.predict(cf, item.target)? == item.label;
        per_instance.push(f64::from(u8::from(factual_right)) - f64::from(u8::from(cf_right)));
    }
    Ok(mean(per_instance))
}

/// Average pre-head embedding over every instance of the dataset.
pub fn mean_embedding(oracle: &Oracle, dataset: &Dataset) -> Result<Array1<f64>> {
    let mut sum: Option<Array1<f64>> = None;
    let mut count = 0usize;
    for g in &dataset.graphs {
        let trace = oracle.forward(g.features.view(), &g.edge_view(), None)?;
        let targets: Vec<Target> = match oracle.task {
            crate::graph::Task::Node => (0..g.node_count()).map(Target::Node).collect(),
            crate::graph::Task::Graph => vec![Target::Graph],
        };
        for t in targets {
            let e = trace.embedding(t);
            count += 1;
            match &mut sum {
                Some(s) => *s += &e,
                None => sum = Some(e),
            }
        }
    }
    sum.map(|s| s / count as f64)
        .ok_or_else(|| Error::Config("cannot embed an empty dataset".into()))
}

/// Euclidean distance from the counterfactual's embedding to `mean`.
pub fn distribution_distance(oracle: &Oracle, counterfactual: &Graph, target: Target, mean: &Array1<f64>) -> Result<f64> {
    let e = oracle.embed(counterfactual, target)?;
    if e.len() != mean.len() {
        return Err(Error::dim(format!("embedding of width {} against mean of width {}", e.len(), mean.len())));
    }
    Ok((&e - mean).mapv(|d| d * d).sum().sqrt())
}

/// Share of feature entries that differ; `None` for an empty matrix.
pub fn node_sparsity(factual: &Graph, counterfactual: &Graph) -> Result<Option<f64>> {
    if factual.features.dim() != counterfactual.features.dim() {
        return Err(Error::dim("factual and counterfactual feature shapes differ"));
    }
    let total = factual.features.len();
    let changed = factual
        .features
        .iter()
        .zip(&counterfactual.features)
        .filter(|(a, b)| a != b)
        .count();
    Ok((total > 0).then(|| changed as f64 / total as f64))
}

/// Share of factual edges missing from the counterfactual; `None` without edges.
pub fn edge_sparsity(factual: &Graph, counterfactual: &Graph) -> Result<Option<f64>> {
    if factual.node_count() != counterfactual.node_count() {
        return Err(Error::dim("factual and counterfactual node counts differ"));
    }
    let m = factual.edge_count();
    let kept: std::collections::HashSet<_> = counterfactual.edges().iter().copied().collect();
    let missing = factual.edges().iter().filter(|e| !kept.contains(e)).count();
    Ok((m > 0).then(|| missing as f64 / m as f64))
}

/// Metric values of one fold.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub validity: Option<f64>,
    pub fidelity: Option<f64>,
    pub distribution_distance: Option<f64>,
    pub node_sparsity: Option<f64>,
    pub edge_sparsity: Option<f64>,
    pub explained: usize,
    pub attempted: usize,
}

pub fn fold_metrics(oracle: &Oracle, items: &[Evaluated<'_>], mean_embedding: &Array1<f64>) -> Result<FoldMetrics> {
    let results: Vec<&ExplanationResult> = items.iter().map(|i| i.result).collect();
    let mut distances = Vec::new();
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for item in items {
        let Some(cf) = item.result.counterfactual.as_ref().filter(|_| item.result.found) else {
            continue;
        };
        distances.push(distribution_distance(oracle, cf, item.target, mean_embedding)?);
        nodes.extend(node_sparsity(item.factual, cf)?);
        edges.extend(edge_sparsity(item.factual, cf)?);
    }
    Ok(FoldMetrics {
        validity: validity(&results),
        fidelity: fidelity(oracle, items)?,
        distribution_distance: mean(distances),
        node_sparsity: mean(nodes),
        edge_sparsity: mean(edges),
        explained: results.iter().filter(|r| r.found).count(),
        attempted: results.len(),
    })
}

/// Mean and population standard deviation over the folds where a metric is defined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let Some(m) = mean(values.iter().copied()) else {
            return Self::default();
        };
        let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
        Self {
            mean: Some(m),
            std: Some(var.sqrt()),
        }
    }

    pub fn is_defined(&self) -> bool {
        self.mean.is_some()
    }

    /// `mean (± std)` with three decimals, or `n.d.`.
    pub fn display(&self) -> String {
        match (self.mean, self.std) {
            (Some(m), Some(s)) => format!("{m:.3} (± {s:.3})"),
            _ => "n.d.".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub validity: Summary,
    pub fidelity: Summary,
    pub distribution_distance: Summary,
    pub node_sparsity: Summary,
    pub edge_sparsity: Summary,
    pub explained: usize,
    pub attempted: usize,
    pub folds: usize,
}

pub fn aggregate_report(folds: &[FoldMetrics]) -> MetricReport {
    let collect = |pick: fn(&FoldMetrics) -> Option<f64>| Summary::of(&folds.iter().filter_map(pick).collect::<Vec<_>>());
    MetricReport {
        validity: collect(|f| f.validity),
        fidelity: collect(|f| f.fidelity),
        distribution_distance: collect(|f| f.distribution_distance),
        node_sparsity: collect(|f| f.node_sparsity),
        edge_sparsity: collect(|f| f.edge_sparsity),
        explained: folds.iter().map(|f| f.explained).sum(),
        attempted: folds.iter().map(|f| f.attempted).sum(),
        folds: folds.len(),
    }
}

#[cfg(test)]
mod tests {
    use ndarray::{array, Array2};

    use super::*;
    use crate::gnn::{Head, LayerKind, LayerParams};
    use crate::graph::{synthetic, Task};

    fn result(found: bool) -> ExplanationResult {
        let mut r = ExplanationResult::empty("t", 0, 1);
        r.found = found;
        r
    }

    #[test]
    fn validity_counts() {
        let all: Vec<_> = (0..10).map(|_| result(true)).collect();
        assert_eq!(validity(&all.iter().collect::<Vec<_>>()), Some(1.0));
        let some: Vec<_> = (0..12).map(|i| result(i < 3)).collect();
        assert_eq!(validity(&some.iter().collect::<Vec<_>>()), Some(0.25));
        assert_eq!(validity(&[]), None);
    }

    #[test]
    fn sparsity_counts() {
        let g = Graph::new(Array2::zeros((2, 3)), vec![(0, 1)], false).unwrap();
        assert_eq!(node_sparsity(&g, &g).unwrap(), Some(0.0));
        assert_eq!(edge_sparsity(&g, &g).unwrap(), Some(0.0));
        let mut x = Array2::zeros((2, 3));
        x[[1, 2]] = 1.0;
        let changed = g.with_features(x).unwrap();
        assert_eq!(node_sparsity(&g, &changed).unwrap(), Some(1.0 / 6.0));

        let path = synthetic::path(5, 1);
        let cut = path.retain_edges(&[true, false, true, true]).unwrap();
        assert_eq!(edge_sparsity(&path, &cut).unwrap(), Some(0.25));
        let lonely = synthetic::path(1, 1);
        assert_eq!(edge_sparsity(&lonely, &lonely).unwrap(), None);
    }

    #[test]
    fn aggregation() {
        let fold = |v: Option<f64>| FoldMetrics {
            validity: v,
            ..FoldMetrics::default()
        };
        let single = aggregate_report(&[fold(Some(0.7))]);
        assert_eq!(single.validity.std, Some(0.0));
        let two = aggregate_report(&[fold(Some(0.2)), fold(Some(0.4))]);
        assert!((two.validity.mean.unwrap() - 0.3).abs() < 1e-15);
        let none = aggregate_report(&[fold(None), fold(None)]);
        assert!(!none.validity.is_defined());
        assert_eq!(none.validity.display(), "n.d.");
        let mixed = aggregate_report(&[fold(None), fold(Some(0.5))]);
        assert_eq!(mixed.validity, Summary { mean: Some(0.5), std: Some(0.0) });
    }

    /// One identity GCN layer, head reading the two features as logits.
    fn identity_oracle() -> Oracle {
        Oracle {
            layers: vec![LayerParams::new(LayerKind::Gcn, vec![Array2::eye(2)], None).unwrap()],
            head: Head {
                weight: Array2::eye(2),
                bias: array![0.0, 0.0],
            },
            task: Task::Graph,
            dropout: 0.0,
        }
    }

    #[test]
    fn hand_evaluated_distribution_distance() {
        let oracle = identity_oracle();
        // single isolated nodes: the embedding is relu(x)
        let a = Graph::new(array![[1.0, 0.0]], vec![], false).unwrap().with_graph_label(0);
        let b = Graph::new(array![[0.0, 3.0]], vec![], false).unwrap().with_graph_label(1);
        let ds = Dataset::new("two", vec![a.clone(), b.clone()], Task::Graph).unwrap();
        let mean = mean_embedding(&oracle, &ds).unwrap();
        assert_eq!(mean, array![0.5, 1.5]);
        let da = distribution_distance(&oracle, &a, Target::Graph, &mean).unwrap();
        let db = distribution_distance(&oracle, &b, Target::Graph, &mean).unwrap();
        assert_eq!(da, db);
        assert!((da - (0.25f64 + 2.25).sqrt()).abs() < 1e-15);
        let centre = Graph::new(array![[0.5, 1.5]], vec![], false).unwrap();
        assert_eq!(distribution_distance(&oracle, &centre, Target::Graph, &mean).unwrap(), 0.0);
    }

    #[test]
    fn fidelity_signs() {
        let oracle = identity_oracle();
        let class0 = Graph::new(array![[1.0, 0.0]], vec![], false).unwrap();
        let class1 = Graph::new(array![[0.0, 1.0]], vec![], false).unwrap();
        let mut left = ExplanationResult::empty("t", 0, 1);
        left.found = true;
        left.counterfactual = Some(class1.clone());
        let mut back = ExplanationResult::empty("t", 1, 0);
        back.found = true;
        back.counterfactual = Some(class0.clone());
        let right_then_left = Evaluated {
            factual: &class0,
            target: Target::Graph,
            label: 0,
            result: &left,
        };
        let wrong_then_right = Evaluated {
            factual: &class1,
            target: Target::Graph,
            label: 0,
            result: &back,
        };
        assert_eq!(fidelity(&oracle, &[right_then_left]).unwrap(), Some(1.0));
        assert_eq!(fidelity(&oracle, &[wrong_then_right]).unwrap(), Some(-1.0));
        assert_eq!(fidelity(&oracle, &[]).unwrap(), None);
    }
}
