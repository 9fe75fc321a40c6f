//! Shared generators and a dense reference implementation of the three
//! convolutions, written against plain nested vectors.
#![allow(dead_code)]

use combinex::gnn::{Head, LayerKind, LayerParams, Oracle};
use combinex::graph::{FeatureSpec, Graph, Task};
use ndarray::{Array1, Array2};
use rand::Rng;

/// Undirected graph with `n` nodes, each pair joined with probability `p`,
/// and features drawn from [-1, 1].
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, f: usize, p: f64) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let x = Array2::from_shape_fn((n, f), |_| rng.gen_range(-1.0..1.0));
    Graph::new(x, edges, false).unwrap()
}

/// Same as [`random_graph`] with 0/1 features.
pub fn random_binary_graph<R: Rng>(rng: &mut R, n: usize, f: usize, p: f64) -> Graph {
    let g = random_graph(rng, n, f, p);
    let x = Array2::from_shape_fn((n, f), |_| f64::from(u8::from(rng.gen_bool(0.5))));
    g.with_features(x).unwrap()
}

pub fn random_layer<R: Rng>(rng: &mut R, kind: LayerKind, d_in: usize, d_out: usize) -> LayerParams {
    let weights = (0..kind.matrix_count())
        .map(|_| Array2::from_shape_fn((d_in, d_out), |_| rng.gen_range(-1.0..1.0)))
        .collect();
    let bias = Array1::from_shape_fn(d_out, |_| rng.gen_range(-0.5..0.5));
    LayerParams::new(kind, weights, Some(bias)).unwrap()
}

/// Oracle with random weights and biases everywhere, including the head.
pub fn random_oracle<R: Rng>(
    rng: &mut R,
    kind: LayerKind,
    f: usize,
    hidden: &[usize],
    classes: usize,
    task: Task,
) -> Oracle {
    let mut layers = Vec::new();
    let mut d = f;
    for &h in hidden {
        layers.push(random_layer(rng, kind, d, h));
        d = h;
    }
    Oracle {
        layers,
        head: Head {
            weight: Array2::from_shape_fn((d, classes), |_| rng.gen_range(-1.0..1.0)),
            bias: Array1::from_shape_fn(classes, |_| rng.gen_range(-0.5..0.5)),
        },
        task,
        dropout: 0.0,
    }
}

pub fn unit_spec(f: usize, discrete: bool) -> FeatureSpec {
    FeatureSpec::new(vec![discrete; f], vec![0.0; f], vec![1.0; f]).unwrap()
}

pub type Dense = Vec<Vec<f64>>;

pub fn to_dense(a: &Array2<f64>) -> Dense {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matmul(a: &Dense, b: &Dense) -> Dense {
    let inner = b.len();
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum())
                .collect()
        })
        .collect()
}

fn add(a: &Dense, b: &Dense, scale_b: f64) -> Dense {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + scale_b * y).collect())
        .collect()
}

fn identity(n: usize) -> Dense {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// `A_w + I` from an undirected edge list with one weight per edge.
pub fn adjacency_with_loops(n: usize, edges: &[(usize, usize)], weights: &[f64]) -> Dense {
    let mut a = identity(n);
    for (&(u, v), &w) in edges.iter().zip(weights) {
        a[u][v] += w;
        a[v][u] += w;
    }
    a
}

/// `D^-1/2 (A_w + I) D^-1/2` with degrees taken from the same matrix.
pub fn sym_normalized(a: &Dense) -> Dense {
    let d: Vec<f64> = a.iter().map(|r| r.iter().sum::<f64>()).collect();
    let s: Vec<f64> = d.iter().map(|&x| if x > 0.0 { 1.0 / x.sqrt() } else { 0.0 }).collect();
    a.iter()
        .enumerate()
        .map(|(i, r)| r.iter().enumerate().map(|(j, &v)| s[i] * v * s[j]).collect())
        .collect()
}

fn with_bias(mut h: Dense, bias: &Option<Array1<f64>>) -> Dense {
    if let Some(b) = bias {
        for row in &mut h {
            for (v, bj) in row.iter_mut().zip(b) {
                *v += bj;
            }
        }
    }
    h
}

/// Linear response of one layer evaluated with dense matrices.
pub fn dense_layer(params: &LayerParams, x: &Dense, edges: &[(usize, usize)], weights: &[f64]) -> Dense {
    let n = x.len();
    let a = adjacency_with_loops(n, edges, weights);
    let w: Vec<Dense> = params.weights.iter().map(to_dense).collect();
    let h = match params.kind {
        LayerKind::Gcn => matmul(&matmul(&sym_normalized(&a), x), &w[0]),
        LayerKind::GraphConv => {
            let rows: Dense = a
                .iter()
                .map(|r| {
                    let d: f64 = r.iter().sum();
                    r.iter().map(|v| v / d).collect()
                })
                .collect();
            add(&matmul(&matmul(&rows, x), &w[0]), &matmul(x, &w[1]), 1.0)
        }
        LayerKind::Cheb { k } => {
            // scaled Laplacian with lambda_max = 2: L~ = L - I = -P
            let p = sym_normalized(&a);
            let l: Dense = p.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
            let mut t_prev = x.clone();
            let mut out = matmul(&t_prev, &w[0]);
            if k > 1 {
                let mut t_cur = matmul(&l, x);
                out = add(&out, &matmul(&t_cur, &w[1]), 1.0);
                for wk in w.iter().skip(2) {
                    let next = add(&matmul(&l, &t_cur), &t_prev, -0.5);
                    let next: Dense = next.iter().map(|r| r.iter().map(|v| 2.0 * v).collect()).collect();
                    t_prev = std::mem::replace(&mut t_cur, next);
                    out = add(&out, &matmul(&t_cur, wk), 1.0);
                }
            }
            out
        }
    };
    with_bias(h, &params.bias)
}

/// Logits of every node (node task) or the pooled graph (graph task) via the
/// dense reference: ReLU between convolutions, mean pooling for graphs.
pub fn dense_logits(oracle: &Oracle, x: &Dense, edges: &[(usize, usize)], weights: &[f64]) -> Dense {
    let mut h = x.clone();
    for layer in &oracle.layers {
        h = dense_layer(layer, &h, edges, weights)
            .into_iter()
            .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
            .collect();
    }
    if oracle.task == Task::Graph {
        let n = h.len().max(1) as f64;
        let width = h.first().map_or(0, Vec::len);
        h = vec![(0..width).map(|j| h.iter().map(|r| r[j]).sum::<f64>() / n).collect()];
    }
    with_bias(matmul(&h, &to_dense(&oracle.head.weight)), &Some(oracle.head.bias.clone()))
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn from_dense(d: &Dense) -> Array2<f64> {
    let cols = d.first().map_or(0, Vec::len);
    Array2::from_shape_fn((d.len(), cols), |(i, j)| d[i][j])
}

pub mod gradcheck {
    use combinex::explain::{EtaSource, Objective};
    use combinex::gnn::{argmax, LayerKind, Target};
    use combinex::graph::{FeatureSpec, Task};
    use combinex::loss::EtaMode;
    use combinex::perturb::PerturbationState;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub const STEP: f64 = 1e-5;
    /// Distance to a clamp bound or to the kink of the absolute change below
    /// which a coordinate is left out.
    pub const MARGIN: f64 = 1e-4;

    #[derive(Debug, Default, Clone, Copy)]
    pub struct Outcome {
        pub checked: usize,
        pub skipped: usize,
        pub worst: f64,
    }

    /// `|a - n|` relative to the larger magnitude, which is floored at 1e-3
    /// so that vanishing gradients are compared absolutely.
    pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
    }

    /// Compares the analytic gradients of the total loss against central
    /// differences on one random instance. The cross-entropy gate and alpha
    /// are held at their values at the base point.
    pub fn check(seed: u64, kind: LayerKind, task: Task) -> Outcome {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(3..7);
        let f = rng.gen_range(2..5);
        let discrete: Vec<bool> = (0..f).map(|_| rng.gen_bool(0.5)).collect();
        let mut g = super::random_graph(&mut rng, n, f, 0.5);
        let x = Array2::from_shape_fn((n, f), |(_, j)| {
            if discrete[j] {
                f64::from(u8::from(rng.gen_bool(0.5)))
            } else {
                rng.gen_range(-0.8..0.8)
            }
        });
        g = g.with_features(x).unwrap();
        let lower = discrete.iter().map(|&d| if d { 0.0 } else { -1.0 }).collect();
        let spec = FeatureSpec::new(discrete, lower, vec![1.0; f]).unwrap();
        let oracle = super::random_oracle(&mut rng, kind, f, &[4, 3], 3, task);
        let target = match task {
            Task::Node => Target::Node(rng.gen_range(0..n)),
            Task::Graph => Target::Graph,
        };
        let factual = oracle
            .model_forward(g.features.view(), &g.edge_view(), None, target)
            .unwrap()
            .0;
        let predicted = argmax(&factual);
        let class = (predicted + 1) % 3;
        let objective = Objective {
            oracle: &oracle,
            graph: &g,
            target,
            spec: &spec,
            class,
            eta_mode: EtaMode::UntilFlipped,
            eta_source: EtaSource::Thresholded,
        };
        let mut state = PerturbationState::new(n, f, g.edge_count(), 1.0);
        state.features.mapv_inplace(|_| rng.gen_range(-1.5..1.5));
        state.edges.iter_mut().for_each(|e| *e = rng.gen_range(-2.0..2.0));
        let alpha = rng.gen_range(0.1..0.9);
        let gate = Some(predicted);
        let base = objective.evaluate(&state, |_, _| Ok(alpha), gate).unwrap();
        let total = |s: &PerturbationState| objective.evaluate(s, |_, _| Ok(alpha), gate).unwrap().loss.total;

        let mut out = Outcome::default();
        for i in 0..n {
            for j in 0..f {
                let v = base.views.x_soft[[i, j]];
                let near_bound = (v - spec.lower[j]).abs() < MARGIN || (v - spec.upper[j]).abs() < MARGIN;
                if near_bound || (v - g.features[[i, j]]).abs() < MARGIN {
                    out.skipped += 1;
                    continue;
                }
                let mut s = state.clone();
                s.features[[i, j]] += STEP;
                let up = total(&s);
                s.features[[i, j]] -= 2.0 * STEP;
                let down = total(&s);
                let err = relative_error(base.grad_features[[i, j]], (up - down) / (2.0 * STEP));
                out.worst = out.worst.max(err);
                out.checked += 1;
            }
        }
        for e in 0..g.edge_count() {
            let mut s = state.clone();
            s.edges[e] += STEP;
            let up = total(&s);
            s.edges[e] -= 2.0 * STEP;
            let down = total(&s);
            let err = relative_error(base.grad_edges[e], (up - down) / (2.0 * STEP));
            out.worst = out.worst.max(err);
            out.checked += 1;
        }
        out
    }
}

pub mod brute {
    use combinex::explain::{combinex_explain, ExplainConfig};
    use combinex::gnn::{argmax, LayerKind, Oracle, Target};
    use combinex::graph::{Graph, Task};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::{dense_logits, to_dense, Dense};

    pub struct Case {
        pub oracle: Oracle,
        pub graph: Graph,
        pub node: usize,
        pub class: usize,
    }

    /// Small node-classification instance: at most 4 nodes and 4 edges,
    /// binary features and a single convolution.
    pub fn case(seed: u64) -> Case {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let n = rng.gen_range(2..5);
            let f = rng.gen_range(1..4);
            let kind = [LayerKind::Gcn, LayerKind::GraphConv][rng.gen_range(0..2)];
            let mut graph = super::random_binary_graph(&mut rng, n, f, 0.6);
            if graph.edge_count() > 4 {
                graph = graph.retain_edges(&(0..graph.edge_count()).map(|e| e < 4).collect::<Vec<_>>()).unwrap();
            }
            let oracle = super::random_oracle(&mut rng, kind, f, &[3], 2, Task::Node);
            let node = rng.gen_range(0..n);
            let logits = node_logits(&oracle, &to_dense(&graph.features), graph.edges(), node);
            if (logits[0] - logits[1]).abs() < 1e-9 {
                continue;
            }
            let class = 1 - argmax(&ndarray::Array1::from(logits));
            return Case { oracle, graph, node, class };
        }
    }

    fn node_logits(oracle: &Oracle, x: &Dense, edges: &[(usize, usize)], node: usize) -> Vec<f64> {
        dense_logits(oracle, x, edges, &vec![1.0; edges.len()])[node].clone()
    }

    /// Prediction of the dense reference on a materialised graph.
    pub fn reference_prediction(oracle: &Oracle, graph: &Graph, node: usize) -> usize {
        let l = node_logits(oracle, &to_dense(&graph.features), graph.edges(), node);
        argmax(&ndarray::Array1::from(l))
    }

    /// Whether any edge subset combined with any flip pattern of the binary
    /// feature entries reaches `class`.
    pub fn exists(case: &Case) -> bool {
        let g = &case.graph;
        let (n, f) = g.features.dim();
        let m = g.edge_count();
        let entries = n * f;
        for edge_mask in 0u32..(1 << m) {
            let edges: Vec<(usize, usize)> = (0..m).filter(|e| edge_mask >> e & 1 == 1).map(|e| g.edges()[e]).collect();
            for flips in 0u32..(1 << entries) {
                let x: Dense = (0..n)
                    .map(|i| {
                        (0..f)
                            .map(|j| {
                                let v = g.features[[i, j]];
                                if flips >> (i * f + j) & 1 == 1 { 1.0 - v } else { v }
                            })
                            .collect()
                    })
                    .collect();
                let l = node_logits(&case.oracle, &x, &edges, case.node);
                if argmax(&ndarray::Array1::from(l)) == case.class {
                    return true;
                }
            }
        }
        false
    }

    pub struct Verdict {
        pub found: bool,
        pub valid: bool,
        pub exists: bool,
    }

    pub fn compare(seed: u64) -> Verdict {
        let case = case(seed);
        let spec = super::unit_spec(case.graph.feature_dim(), true);
        let res = combinex_explain(&case.oracle, &case.graph, Target::Node(case.node), &spec, &ExplainConfig::default())
            .unwrap();
        let valid = match res.counterfactual.as_ref().filter(|_| res.found) {
            Some(cf) => {
                let subset = cf.edges().iter().all(|e| case.graph.edges().contains(e));
                let binary = cf.features.iter().all(|&v| v == 0.0 || v == 1.0);
                subset && binary && reference_prediction(&case.oracle, cf, case.node) == case.class
            }
            None => true,
        };
        Verdict {
            found: res.found,
            valid,
            exists: exists(&case),
        }
    }
}
