//! Oracle networks: a stack of convolutions with ReLU, optional mean pooling,
//! and a linear head, with a hand-written reverse pass.

pub mod io;
pub mod layers;
pub mod propagate;
pub mod train;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{EdgeView, Graph, Task};

pub use io::{load_oracle, load_oracle_for_task, save_oracle};
pub use layers::{cheb_forward, gcn_forward, graphconv_forward, LayerKind, LayerParams, LayerTrace};
pub use train::{train_oracle, TrainConfig, TrainReport};

/// Linear classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Oracle {
    pub layers: Vec<LayerParams>,
    pub head: Head,
    pub task: Task,
    /// Applied after every hidden activation during training only.
    pub dropout: f64,
}

/// Which output the caller wants from a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Node(usize),
    Graph,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub edge_slots: usize,
    pub weights: Vec<f64>,
    pub layers: Vec<LayerTrace>,
    /// Inverted-dropout masks per hidden layer (training passes only).
    pub dropout_masks: Vec<Option<Array2<f64>>>,
    /// Final hidden representation per node (the head's input before pooling).
    pub hidden: Array2<f64>,
    /// Node task: one row of logits per node. Graph task: a single row.
    pub logits: Array2<f64>,
}

impl ForwardTrace {
    pub fn node_count(&self) -> usize {
        self.hidden.nrows()
    }

    /// Embedding used for distribution distances: the target node's final
    /// hidden vector, or the mean over nodes for whole graphs.
    pub fn embedding(&self, target: Target) -> Array1<f64> {
        match target {
            Target::Node(v) => self.hidden.row(v).to_owned(),
            Target::Graph => mean_rows(&self.hidden),
        }
    }

    pub fn target_logits(&self, target: Target) -> Array1<f64> {
        match target {
            Target::Node(v) => self.logits.row(v).to_owned(),
            Target::Graph => self.logits.row(0).to_owned(),
        }
    }
}

/// Gradients of one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub features: Array2<f64>,
    /// One entry per directed edge slot.
    pub edge_weights: Vec<f64>,
    pub params: Option<OracleGrads>,
}

#[derive(Debug, Clone)]
pub struct OracleGrads {
    pub layers: Vec<layers::LayerGrads>,
    pub head_weight: Array2<f64>,
    pub head_bias: Array1<f64>,
}

fn mean_rows(m: &Array2<f64>) -> Array1<f64> {
    if m.nrows() == 0 {
        Array1::zeros(m.ncols())
    } else {
        m.mean_axis(Axis(0)).expect("non-empty")
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl Oracle {
    /// Randomly initialised oracle; `hidden` lists the width of every
    /// convolution.
    pub fn init<R: Rng>(
        rng: &mut R,
        kind: LayerKind,
        input_dim: usize,
        hidden: &[usize],
        class_count: usize,
        task: Task,
        dropout: f64,
    ) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::Config("an oracle needs at least one convolution".into()));
        }
        if let LayerKind::Cheb { k: 0 } = kind {
            return Err(Error::Config("Chebyshev order must be at least 1".into()));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut d_in = input_dim;
        for &d_out in hidden {
            layers.push(LayerParams::glorot(rng, kind, d_in, d_out));
            d_in = d_out;
        }
        let head = LayerParams::glorot(rng, LayerKind::Gcn, d_in, class_count);
        let oracle = Self {
            layers,
            head: Head {
                weight: head.weights.into_iter().next().expect("one matrix"),
                bias: Array1::zeros(class_count),
            },
            task,
            dropout,
        };
        oracle.validate()?;
        Ok(oracle)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("an oracle needs at least one convolution".into()));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].d_out() != pair[1].d_in() {
                return Err(Error::dim(format!(
                    "layer {i} emits {} features but layer {} expects {}",
                    pair[0].d_out(),
                    i + 1,
                    pair[1].d_in()
                )));
            }
        }
        let last = self.layers.last().expect("non-empty").d_out();
        if self.head.weight.nrows() != last || self.head.bias.len() != self.head.weight.ncols() {
            return Err(Error::dim("classifier head does not match the last layer"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn class_count(&self) -> usize {
        self.head.weight.ncols()
    }

    pub fn kind(&self) -> LayerKind {
        self.layers[0].kind
    }

    /// Hops over which a node's output depends on the graph.
    pub fn receptive_hops(&self) -> usize {
        self.layers.iter().map(|l| l.kind.hops()).sum()
    }

    pub fn describe(&self) -> String {
        let widths: Vec<String> = self.layers.iter().map(|l| l.d_out().to_string()).collect();
        format!("{}[{}]", self.kind().name(), widths.join("-"))
    }

    /// Inference forward pass. `weights` has one entry per directed edge slot;
    /// `None` means unit weights.
    pub fn forward(
        &self,
        x: ArrayView2<'_, f64>,
        edges: &EdgeView,
        weights: Option<&[f64]>,
    ) -> Result<ForwardTrace> {
        self.forward_impl::<rand::rngs::ThreadRng>(x, edges, weights, None)
    }

    /// Training forward pass with inverted dropout drawn from `rng`.
    pub fn forward_train<R: Rng>(
        &self,
        x: ArrayView2<'_, f64>,
        edges: &EdgeView,
        rng: &mut R,
    ) -> Result<ForwardTrace> {
        self.forward_impl(x, edges, None, Some(rng))
    }

    fn forward_impl<R: Rng>(
        &self,
        x: ArrayView2<'_, f64>,
        edges: &EdgeView,
        weights: Option<&[f64]>,
        mut rng: Option<&mut R>,
    ) -> Result<ForwardTrace> {
        let weights = match weights {
            Some(w) if w.len() != edges.len() => {
                return Err(Error::dim(format!(
                    "{} edge weights for {} edge slots",
                    w.len(),
                    edges.len()
                )))
            }
            Some(w) => w.to_vec(),
            None => vec![1.0; edges.len()],
        };
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for params in &self.layers {
            let (out, trace) = layers::layer_forward(h.view(), edges, &weights, params)?;
            let mut act = out.mapv(|v| v.max(0.0));
            let mask = match rng.as_deref_mut() {
                Some(rng) if self.dropout > 0.0 => {
                    let keep = 1.0 - self.dropout;
                    let mask = Array2::from_shape_fn(act.dim(), |_| {
                        if rng.gen_bool(keep) {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    act *= &mask;
                    Some(mask)
                }
                _ => None,
            };
            traces.push(trace);
            masks.push(mask);
            h = act;
        }
        let pooled = match self.task {
            Task::Node => h.clone(),
            Task::Graph => mean_rows(&h).insert_axis(Axis(0)),
        };
        let logits = pooled.dot(&self.head.weight) + &self.head.bias;
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric {
                epoch: None,
                message: "oracle produced non-finite logits".into(),
            });
        }
        Ok(ForwardTrace {
            edge_slots: edges.len(),
            weights,
            layers: traces,
            dropout_masks: masks,
            hidden: h,
            logits,
        })
    }

    /// Reverse pass of `<logits, upstream>`; `upstream` has the shape of
    /// `trace.logits`.
    pub fn backward(
        &self,
        edges: &EdgeView,
        trace: &ForwardTrace,
        upstream: ArrayView2<'_, f64>,
        want_params: bool,
    ) -> Result<Gradients> {
        if trace.edge_slots != edges.len() || trace.layers.len() != self.layers.len() {
            return Err(Error::Trace(format!(
                "trace has {} edge slots and {} layers, call has {} and {}",
                trace.edge_slots,
                trace.layers.len(),
                edges.len(),
                self.layers.len()
            )));
        }
        if trace.node_count() != edges.node_count {
            return Err(Error::Trace(format!(
                "trace covers {} nodes, graph has {}",
                trace.node_count(),
                edges.node_count
            )));
        }
        if upstream.dim() != trace.logits.dim() {
            return Err(Error::Trace(format!(
                "upstream shape {:?} differs from logits {:?}",
                upstream.dim(),
                trace.logits.dim()
            )));
        }
        let n = trace.node_count();
        let (head_weight, head_bias, mut grad_h) = {
            let pooled_grad = upstream.dot(&self.head.weight.t());
            let head_bias = upstream.sum_axis(Axis(0));
            match self.task {
                Task::Node => (trace.hidden.t().dot(&upstream), head_bias, pooled_grad),
                Task::Graph => {
                    let pooled = mean_rows(&trace.hidden).insert_axis(Axis(0));
                    let scale = if n == 0 { 0.0 } else { 1.0 / n as f64 };
                    let grad_h = Array2::from_shape_fn((n, pooled_grad.ncols()), |(_, j)| {
                        pooled_grad[[0, j]] * scale
                    });
                    (pooled.t().dot(&upstream), head_bias, grad_h)
                }
            }
        };
        let mut grad_weights = vec![0.0; edges.len()];
        let mut layer_grads = Vec::with_capacity(self.layers.len());
        for ((params, lt), mask) in self
            .layers
            .iter()
            .zip(&trace.layers)
            .zip(&trace.dropout_masks)
            .rev()
        {
            if let Some(mask) = mask {
                grad_h *= mask;
            }
            // ReLU'(0) = 0.
            ndarray::Zip::from(&mut grad_h)
                .and(&lt.output)
                .for_each(|g, &pre| {
                    if pre <= 0.0 {
                        *g = 0.0
                    }
                });
            let (grad_in, grads) = layers::layer_backward(
                params,
                lt,
                edges,
                &trace.weights,
                grad_h.view(),
                &mut grad_weights,
                want_params,
            );
            if let Some(g) = grads {
                layer_grads.push(g);
            }
            grad_h = grad_in;
        }
        layer_grads.reverse();
        Ok(Gradients {
            features: grad_h,
            edge_weights: grad_weights,
            params: want_params.then_some(OracleGrads {
                layers: layer_grads,
                head_weight,
                head_bias,
            }),
        })
    }

    /// Logits for `target` and the trace that produced them.
    pub fn model_forward(
        &self,
        x: ArrayView2<'_, f64>,
        edges: &EdgeView,
        weights: Option<&[f64]>,
        target: Target,
    ) -> Result<(Array1<f64>, ForwardTrace)> {
        self.check_target(edges.node_count, target)?;
        let trace = self.forward(x, edges, weights)?;
        Ok((trace.target_logits(target), trace))
    }

    /// Gradients of `<logits(target), upstream>` with respect to the node
    /// features and the per-slot edge weights.
    pub fn backward_wrt_inputs(
        &self,
        edges: &EdgeView,
        trace: &ForwardTrace,
        target: Target,
        upstream: &Array1<f64>,
    ) -> Result<(Array2<f64>, Vec<f64>)> {
        self.check_target(edges.node_count, target)?;
        if upstream.len() != self.class_count() {
            return Err(Error::Trace(format!(
                "upstream has {} entries for {} classes",
                upstream.len(),
                self.class_count()
            )));
        }
        let mut full = Array2::zeros(trace.logits.dim());
        let row = match target {
            Target::Node(v) => v,
            Target::Graph => 0,
        };
        if row >= full.nrows() {
            return Err(Error::Trace("target row outside the traced logits".into()));
        }
        full.row_mut(row).assign(upstream);
        let g = self.backward(edges, trace, full.view(), false)?;
        Ok((g.features, g.edge_weights))
    }

    fn check_target(&self, n: usize, target: Target) -> Result<()> {
        match (self.task, target) {
            (Task::Node, Target::Node(v)) if v < n => Ok(()),
            (Task::Node, Target::Node(v)) => Err(Error::Index {
                index: v,
                bound: n,
                context: "target node".into(),
            }),
            (Task::Graph, Target::Graph) => Ok(()),
            (task, target) => Err(Error::Config(format!(
                "target {target:?} does not fit a {} oracle",
                task.as_str()
            ))),
        }
    }

    /// Predicted class on a materialised graph with unit edge weights.
    pub fn predict(&self, graph: &Graph, target: Target) -> Result<usize> {
        let (logits, _) = self.model_forward(graph.features.view(), &graph.edge_view(), None, target)?;
        Ok(argmax(&logits))
    }

    /// Pre-head embedding of `target` on a materialised graph.
    pub fn embed(&self, graph: &Graph, target: Target) -> Result<Array1<f64>> {
        self.check_target(graph.node_count(), target)?;
        Ok(self
            .forward(graph.features.view(), &graph.edge_view(), None)?
            .embedding(target))
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    fn identity_oracle(task: Task) -> Oracle {
        Oracle {
            layers: vec![LayerParams::new(LayerKind::Gcn, vec![Array2::eye(2)], None).unwrap()],
            head: Head {
                weight: Array2::eye(2),
                bias: Array1::zeros(2),
            },
            task,
            dropout: 0.0,
        }
    }

    #[test]
    fn relu_on_hidden_linear_head() {
        let oracle = identity_oracle(Task::Node);
        let view = EdgeView::new(1, &[], false);
        let (logits, _) = oracle
            .model_forward(array![[0.3, -0.3]].view(), &view, None, Target::Node(0))
            .unwrap();
        assert_eq!(logits, array![0.3, 0.0]);
    }

    #[test]
    fn unit_weights_equal_default() {
        let oracle = identity_oracle(Task::Node);
        let view = EdgeView::new(2, &[(0, 1)], false);
        let x = array![[0.2, 0.9], [1.5, -0.4]];
        let (a, _) = oracle.model_forward(x.view(), &view, None, Target::Node(1)).unwrap();
        let (b, _) = oracle
            .model_forward(x.view(), &view, Some(&[1.0, 1.0]), Target::Node(1))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn graph_pooling_of_identical_nodes() {
        let oracle = identity_oracle(Task::Graph);
        let x = array![[0.5, 0.25], [0.5, 0.25]];
        let view = EdgeView::new(2, &[(0, 1)], false);
        let trace = oracle.forward(x.view(), &view, None).unwrap();
        assert_eq!(trace.embedding(Target::Graph), trace.hidden.row(0).to_owned());
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let oracle = identity_oracle(Task::Node);
        let view = EdgeView::new(2, &[(0, 1)], false);
        let x = array![[0.2, 0.9], [1.5, -0.4]];
        let (_, trace) = oracle.model_forward(x.view(), &view, None, Target::Node(0)).unwrap();
        let (dx, dw) = oracle
            .backward_wrt_inputs(&view, &trace, Target::Node(0), &Array1::zeros(2))
            .unwrap();
        assert!(dx.iter().all(|&v| v == 0.0));
        assert!(dw.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_trace_rejected() {
        let oracle = identity_oracle(Task::Node);
        let view = EdgeView::new(2, &[(0, 1)], false);
        let other = EdgeView::new(2, &[], false);
        let (_, trace) = oracle
            .model_forward(array![[1.0, 0.0], [0.0, 1.0]].view(), &view, None, Target::Node(0))
            .unwrap();
        let err = oracle
            .backward_wrt_inputs(&other, &trace, Target::Node(0), &array![1.0, 0.0])
            .unwrap_err();
        assert!(matches!(err, Error::Trace(_)));
    }

    #[test]
    fn dimension_chain_break() {
        let mut oracle = identity_oracle(Task::Node);
        oracle
            .layers
            .push(LayerParams::new(LayerKind::Gcn, vec![Array2::eye(3)], None).unwrap());
        assert!(matches!(oracle.validate(), Err(Error::Dimension(_))));
    }
}
