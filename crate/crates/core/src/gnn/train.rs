//! Full-batch oracle training with Adam and dropout.

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, LayerKind, Oracle, OracleGrads, Target};
use crate::error::{Error, Result};
use crate::graph::{Dataset, InstanceRef, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: LayerKind,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    /// Share of the training instances held out for model selection.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Three hidden layers: 128 wide for GCN, 64 for Cheb (K = 1) and GraphConv.
    pub fn for_kind(kind: LayerKind) -> Self {
        let width = match kind {
            LayerKind::Gcn => 128,
            LayerKind::Cheb { .. } | LayerKind::GraphConv => 64,
        };
        Self {
            kind,
            hidden: vec![width; 3],
            epochs: 200,
            learning_rate: 0.01,
            dropout: 0.5,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_kind(LayerKind::Gcn)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub best_epoch: usize,
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
    pub losses: Vec<f64>,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(shapes: &[usize], lr: f64) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            lr,
        }
    }

    fn update(&mut self, params: Vec<&mut [f64]>, grads: &[Vec<f64>]) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

fn param_slices(oracle: &mut Oracle) -> Vec<&mut [f64]> {
    let mut out: Vec<&mut [f64]> = Vec::new();
    for layer in &mut oracle.layers {
        for w in &mut layer.weights {
            out.push(w.as_slice_mut().expect("standard layout"));
        }
        if let Some(b) = &mut layer.bias {
            out.push(b.as_slice_mut().expect("standard layout"));
        }
    }
    out.push(oracle.head.weight.as_slice_mut().expect("standard layout"));
    out.push(oracle.head.bias.as_slice_mut().expect("standard layout"));
    out
}

fn grad_vectors(g: &OracleGrads) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for layer in &g.layers {
        for w in &layer.weights {
            out.push(w.iter().copied().collect());
        }
        if let Some(b) = &layer.bias {
            out.push(b.to_vec());
        }
    }
    out.push(g.head_weight.iter().copied().collect());
    out.push(g.head_bias.to_vec());
    out
}

/// Softmax cross-entropy of one logit row and its gradient.
pub fn cross_entropy(logits: ArrayView1<'_, f64>, label: usize) -> (f64, Vec<f64>) {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exp: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    let loss = total.ln() + max - logits[label];
    let mut grad: Vec<f64> = exp.iter().map(|e| e / total).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Fraction of `instances` whose prediction equals their label.
pub fn accuracy(oracle: &Oracle, dataset: &Dataset, instances: &[InstanceRef]) -> Result<f64> {
    if instances.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for (gi, group) in group_by_graph(instances) {
        let g = &dataset.graphs[gi];
        let trace = oracle.forward(g.features.view(), &g.edge_view(), None)?;
        for inst in group {
            let target = target_of(inst);
            if Some(argmax(&trace.target_logits(target))) == dataset.label_of(inst) {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / instances.len() as f64)
}

pub(crate) fn target_of(inst: InstanceRef) -> Target {
    inst.node.map_or(Target::Graph, Target::Node)
}

fn group_by_graph(instances: &[InstanceRef]) -> Vec<(usize, Vec<InstanceRef>)> {
    let mut groups: Vec<(usize, Vec<InstanceRef>)> = Vec::new();
    for &inst in instances {
        match groups.iter_mut().find(|(g, _)| *g == inst.graph) {
            Some((_, list)) => list.push(inst),
            None => groups.push((inst.graph, vec![inst])),
        }
    }
    groups
}

/// Trains on every instance of the dataset.
pub fn train_oracle(dataset: &Dataset, config: &TrainConfig) -> Result<(Oracle, TrainReport)> {
    train_oracle_on(dataset, &dataset.instances(), config)
}

/// Trains on `instances`, holding out a validation share, and returns the
/// epoch with the best (validation accuracy, training accuracy).
pub fn train_oracle_on(
    dataset: &Dataset,
    instances: &[InstanceRef],
    config: &TrainConfig,
) -> Result<(Oracle, TrainReport)> {
    let class_count = dataset.class_count();
    if class_count == 0 || instances.is_empty() {
        return Err(Error::Config("no labelled training instances".into()));
    }
    if instances.iter().any(|&i| dataset.label_of(i).is_none()) {
        return Err(Error::Config("training instance without a label".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut oracle = Oracle::init(
        &mut rng,
        config.kind,
        dataset.feature_dim(),
        &config.hidden,
        class_count,
        dataset.task,
        config.dropout,
    )?;
    let mut shuffled = instances.to_vec();
    shuffled.shuffle(&mut rng);
    let val_len = ((instances.len() as f64) * config.validation_fraction).floor() as usize;
    let val_len = val_len.min(instances.len().saturating_sub(1));
    let (validation, train) = shuffled.split_at(val_len);
    let mut train = train.to_vec();
    train.sort_by_key(|i| (i.graph, i.node));
    let groups = group_by_graph(&train);

    let shapes: Vec<usize> = param_slices(&mut oracle).iter().map(|s| s.len()).collect();
    let mut adam = Adam::new(&shapes, config.learning_rate);
    let mut report = TrainReport {
        train_accuracy: accuracy(&oracle, dataset, &train)?,
        validation_accuracy: (!validation.is_empty())
            .then(|| accuracy(&oracle, dataset, validation))
            .transpose()?,
        ..TrainReport::default()
    };
    let mut best = (oracle.clone(), report.validation_accuracy.unwrap_or(0.0), report.train_accuracy);
    let scale = 1.0 / train.len() as f64;

    for epoch in 1..=config.epochs {
        let mut total: Option<Vec<Vec<f64>>> = None;
        let mut loss = 0.0;
        for (gi, group) in &groups {
            let g = &dataset.graphs[*gi];
            let view = g.edge_view();
            let trace = oracle.forward_train(g.features.view(), &view, &mut rng)?;
            let mut upstream = Array2::zeros(trace.logits.dim());
            for &inst in group {
                let row = match dataset.task {
                    Task::Node => inst.node.expect("node instance"),
                    Task::Graph => 0,
                };
                let label = dataset.label_of(inst).expect("checked above");
                let (l, grad) = cross_entropy(trace.logits.row(row), label);
                loss += l * scale;
                for (c, gc) in grad.into_iter().enumerate() {
                    upstream[[row, c]] += gc * scale;
                }
            }
            let grads = oracle.backward(&view, &trace, upstream.view(), true)?;
            let flat = grad_vectors(grads.params.as_ref().expect("requested"));
            match &mut total {
                None => total = Some(flat),
                Some(acc) => {
                    for (a, f) in acc.iter_mut().zip(flat) {
                        a.iter_mut().zip(f).for_each(|(a, f)| *a += f);
                    }
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::Numeric {
                epoch: Some(epoch),
                message: "training loss diverged".into(),
            });
        }
        report.losses.push(loss);
        if let Some(total) = total {
            adam.update(param_slices(&mut oracle), &total);
        }
        let train_acc = accuracy(&oracle, dataset, &train)?;
        let val_acc = if validation.is_empty() {
            0.0
        } else {
            accuracy(&oracle, dataset, validation)?
        };
        if (val_acc, train_acc) > (best.1, best.2) {
            best = (oracle.clone(), val_acc, train_acc);
            report.best_epoch = epoch;
        }
    }
    report.train_accuracy = best.2;
    report.validation_accuracy = (!validation.is_empty()).then_some(best.1);
    Ok((best.0, report))
}
