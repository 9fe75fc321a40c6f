//! The counterfactual search loop and the naive baselines it is compared with.

pub mod baselines;

use std::time::Instant;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{argmax, Oracle, Target};
use crate::graph::{extract_khop_subgraph, FeatureSpec, Graph, Task};
use crate::loss::{get_alpha, get_loss, get_loss_backward, partial_losses, AlphaPolicy, EtaMode, LossBreakdown, LossInputs};
use crate::perturb::{get_pert, pert_backward, PerturbationState, PerturbedViews};

pub use baselines::{baseline_ego, baseline_random_edges, baseline_random_features};

/// How the class a counterfactual must reach is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetRule {
    /// Second-highest logit of the factual prediction.
    #[default]
    RunnerUp,
    Class(usize),
}

impl TargetRule {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "runner-up" {
            return Ok(TargetRule::RunnerUp);
        }
        s.strip_prefix("class=")
            .and_then(|k| k.parse().ok())
            .map(TargetRule::Class)
            .ok_or_else(|| Error::Config(format!("target rule `{s}`: expected runner-up or class=K")))
    }

    pub fn resolve(self, logits: &Array1<f64>) -> Result<usize> {
        let classes = logits.len();
        match self {
            TargetRule::Class(k) if k < classes => Ok(k),
            TargetRule::Class(k) => Err(Error::Class { class: k, count: classes }),
            TargetRule::RunnerUp => {
                if classes < 2 {
                    return Err(Error::Config("runner-up target needs at least two classes".into()));
                }
                let top = argmax(logits);
                let mut masked = logits.clone();
                masked[top] = f64::NEG_INFINITY;
                Ok(argmax(&masked))
            }
        }
    }
}

/// Which prediction switches the cross-entropy term off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaSource {
    /// The prediction on the soft (differentiable) views.
    Soft,
    /// The prediction on the thresholded views.
    #[default]
    Thresholded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub alpha: AlphaPolicy,
    pub target: TargetRule,
    pub seed: u64,
    /// Initial edge logit; `sigmoid(1) > 0.5` so every edge starts kept.
    pub edge_init: f64,
    pub eta_mode: EtaMode,
    pub eta_source: EtaSource,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            learning_rate: 0.1,
            alpha: AlphaPolicy::Constant {
                alpha: AlphaPolicy::DEFAULT_ALPHA,
            },
            target: TargetRule::RunnerUp,
            seed: 0,
            edge_init: 1.0,
            eta_mode: EtaMode::UntilFlipped,
            eta_source: EtaSource::Thresholded,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("explainer needs at least one epoch".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !self.edge_init.is_finite() {
            return Err(Error::Config("edge logit initialisation must be finite".into()));
        }
        self.alpha.validate(self.epochs)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplanationResult {
    pub explainer: String,
    pub factual_prediction: usize,
    pub target_class: usize,
    pub found: bool,
    /// The counterfactual on the full input graph, when found.
    #[serde(skip)]
    pub counterfactual: Option<Graph>,
    pub best_loss: Option<f64>,
    /// Loss of every accepted counterfactual, in acceptance order.
    pub accepted_losses: Vec<f64>,
    pub epochs_run: usize,
    pub trajectory: Vec<LossBreakdown>,
    pub elapsed_seconds: f64,
    /// Wall time of the optimisation loop divided by the epochs run.
    pub epoch_seconds: f64,
}

impl ExplanationResult {
    pub(crate) fn empty(explainer: &str, factual_prediction: usize, target_class: usize) -> Self {
        Self {
            explainer: explainer.into(),
            factual_prediction,
            target_class,
            found: false,
            counterfactual: None,
            best_loss: None,
            accepted_losses: Vec::new(),
            epochs_run: 0,
            trajectory: Vec::new(),
            elapsed_seconds: 0.0,
            epoch_seconds: 0.0,
        }
    }
}

/// The part of the input graph that can influence the prediction, with maps
/// back to the full graph.
pub(crate) struct Local {
    pub graph: Graph,
    pub target: Target,
    /// `None` when the local graph is the full graph.
    pub nodes: Option<Vec<usize>>,
    pub edges: Option<Vec<usize>>,
}

/// Node targets keep everything within `receptive_hops + 1` hops: the extra
/// hop carries the degrees that normalise the outermost messages.
pub(crate) fn localize(oracle: &Oracle, graph: &Graph, target: Target) -> Result<Local> {
    match target {
        Target::Graph => Ok(Local {
            graph: graph.clone(),
            target,
            nodes: None,
            edges: None,
        }),
        Target::Node(v) => {
            let sub = extract_khop_subgraph(graph, v, oracle.receptive_hops() + 1)?;
            Ok(Local {
                graph: sub.graph,
                target: Target::Node(sub.center),
                nodes: Some(sub.nodes),
                edges: Some(sub.edges),
            })
        }
    }
}

/// Rebuilds a full-size graph from local features and a local keep mask.
pub(crate) fn materialize(full: &Graph, local: &Local, x: &Array2<f64>, keep: &[bool]) -> Result<Graph> {
    let mut features = full.features.clone();
    match &local.nodes {
        Some(nodes) => {
            for (i, &v) in nodes.iter().enumerate() {
                features.row_mut(v).assign(&x.row(i));
            }
        }
        None => features.assign(x),
    }
    let mut keep_full = vec![true; full.edge_count()];
    match &local.edges {
        Some(edges) => {
            for (k, &e) in edges.iter().enumerate() {
                keep_full[e] = keep[k];
            }
        }
        None => keep_full.copy_from_slice(keep),
    }
    let edges = full
        .edges()
        .iter()
        .zip(&keep_full)
        .filter(|(_, &k)| k)
        .map(|(&e, _)| e)
        .collect();
    let mut out = Graph::new(features, edges, full.is_directed())?;
    out.node_labels = full.node_labels.clone();
    out.graph_label = full.graph_label;
    Ok(out)
}

pub(crate) fn check_instance(oracle: &Oracle, graph: &Graph, target: Target, spec: &FeatureSpec) -> Result<()> {
    if spec.dim() != graph.feature_dim() || oracle.input_dim() != graph.feature_dim() {
        return Err(Error::dim(format!(
            "graph has {} features, spec {}, oracle {}",
            graph.feature_dim(),
            spec.dim(),
            oracle.input_dim()
        )));
    }
    match (oracle.task, target) {
        (Task::Node, Target::Node(_)) | (Task::Graph, Target::Graph) => Ok(()),
        _ => Err(Error::Config(format!(
            "target {target:?} does not fit a {}-task oracle",
            oracle.task.as_str()
        ))),
    }
}

/// Factual prediction and target class, failing when the instance already
/// sits in the target class.
pub(crate) fn factual_and_target(oracle: &Oracle, graph: &Graph, target: Target, rule: TargetRule) -> Result<(usize, usize)> {
    let (logits, _) = oracle.model_forward(graph.features.view(), &graph.edge_view(), None, target)?;
    let predicted = argmax(&logits);
    let class = rule.resolve(&logits)?;
    if predicted == class {
        return Err(Error::AlreadyCounterfactual { target: class });
    }
    Ok((predicted, class))
}

/// Confirms a counterfactual on a freshly built graph with unit edge weights.
pub(crate) fn verify(oracle: &Oracle, factual: &Graph, candidate: &Graph, target: Target, spec: &FeatureSpec, class: usize) -> Result<bool> {
    let subset = candidate.edges().iter().all(|e| factual.edges().contains(e));
    let integral = (0..spec.dim())
        .filter(|&j| spec.discrete[j])
        .all(|j| candidate.features.column(j).iter().all(|v| v.fract() == 0.0));
    Ok(subset && integral && spec.contains(&candidate.features) && oracle.predict(candidate, target)? == class)
}

/// The explanation loss of one instance as a function of the perturbation
/// parameters.
pub struct Objective<'a> {
    pub oracle: &'a Oracle,
    pub graph: &'a Graph,
    pub target: Target,
    pub spec: &'a FeatureSpec,
    pub class: usize,
    pub eta_mode: EtaMode,
    pub eta_source: EtaSource,
}

/// One evaluation of an [`Objective`] with its gradients.
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub views: PerturbedViews,
    pub soft_logits: Array1<f64>,
    pub hard_prediction: usize,
    /// Prediction that decided the cross-entropy gate.
    pub gate_prediction: usize,
    pub loss: LossBreakdown,
    /// Gradient of the total loss with respect to the feature logits.
    pub grad_features: Array2<f64>,
    /// Gradient of the total loss with respect to the edge logits.
    pub grad_edges: Vec<f64>,
}

impl Objective<'_> {
    /// `alpha` receives the edge and feature losses. `gate` overrides the
    /// prediction that switches cross-entropy on or off.
    pub fn evaluate(
        &self,
        state: &PerturbationState,
        alpha: impl FnOnce(f64, f64) -> Result<f64>,
        gate: Option<usize>,
    ) -> Result<ObjectiveEval> {
        let x = &self.graph.features;
        let view = self.graph.edge_view();
        let views = get_pert(state, x, self.spec, &view)?;
        let (soft_logits, soft_trace) =
            self.oracle
                .model_forward(views.x_soft.view(), &view, Some(&views.edge_soft), self.target)?;
        let (hard_logits, _) =
            self.oracle
                .model_forward(views.x_hard.view(), &view, Some(&views.edge_hard), self.target)?;
        let hard_prediction = argmax(&hard_logits);
        let gate_prediction = gate.unwrap_or(match self.eta_source {
            EtaSource::Soft => argmax(&soft_logits),
            EtaSource::Thresholded => hard_prediction,
        });
        let inputs = LossInputs {
            logits: &soft_logits,
            target: self.class,
            edge_logits: &state.edges,
            x,
            spec: self.spec,
            x_discrete: &views.x_discrete,
            x_continuous: &views.x_continuous,
            gate_prediction,
            eta_mode: self.eta_mode,
        };
        let (edge_loss, feature_loss) = partial_losses(&inputs)?;
        let alpha = alpha(edge_loss, feature_loss)?;
        let loss = get_loss(&inputs, alpha)?;
        let grads = get_loss_backward(&inputs, alpha, 1.0)?;
        let (grad_x, grad_slots) = self.oracle.backward_wrt_inputs(&view, &soft_trace, self.target, &grads.logits)?;
        let grad_x_soft = grad_x + &grads.x_discrete + &grads.x_continuous;
        let (grad_features, grad_ep) = pert_backward(state, x, self.spec, &view, &grad_x_soft, &grad_slots)?;
        let grad_edges = grad_ep.iter().zip(&grads.edge_logits).map(|(m, l)| m + l).collect();
        Ok(ObjectiveEval {
            views,
            soft_logits,
            hard_prediction,
            gate_prediction,
            loss,
            grad_features,
            grad_edges,
        })
    }
}

/// Searches for a counterfactual of `target` in `graph` by descending the
/// combined loss over feature and edge perturbations.
pub fn combinex_explain(
    oracle: &Oracle,
    graph: &Graph,
    target: Target,
    spec: &FeatureSpec,
    config: &ExplainConfig,
) -> Result<ExplanationResult> {
    let started = Instant::now();
    config.validate()?;
    check_instance(oracle, graph, target, spec)?;
    let (factual, class) = factual_and_target(oracle, graph, target, config.target)?;
    let mut result = ExplanationResult::empty(&format!("combinex-{}", config.alpha.short_name()), factual, class);

    let local = localize(oracle, graph, target)?;
    let (n, f) = local.graph.features.dim();
    let mut state = PerturbationState::new(n, f, local.graph.edge_count(), config.edge_init);
    let freeze_edges = matches!(config.alpha, AlphaPolicy::Feature);
    let mut best: Option<(f64, Array2<f64>, Vec<bool>)> = None;

    let objective = Objective {
        oracle,
        graph: &local.graph,
        target: local.target,
        spec,
        class,
        eta_mode: config.eta_mode,
        eta_source: config.eta_source,
    };
    let loop_start = Instant::now();
    for epoch in 0..config.epochs {
        let eval = objective.evaluate(
            &state,
            |edge, features| get_alpha(epoch, edge, features, &config.alpha, config.epochs),
            None,
        )?;
        let loss = eval.loss;
        if !loss.total.is_finite() {
            return Err(Error::Numeric {
                epoch: Some(epoch),
                message: "explanation loss is not finite".into(),
            });
        }
        result.trajectory.push(loss);
        result.epochs_run = epoch + 1;

        if eval.hard_prediction == class && best.as_ref().is_none_or(|b| loss.total < b.0) {
            result.accepted_losses.push(loss.total);
            best = Some((loss.total, eval.views.x_hard, eval.views.keep));
        }

        state.features.scaled_add(-config.learning_rate, &eval.grad_features);
        if !freeze_edges {
            for (e, g) in state.edges.iter_mut().zip(&eval.grad_edges) {
                *e -= config.learning_rate * g;
            }
        }
        if !state.is_finite() {
            return Err(Error::Numeric {
                epoch: Some(epoch),
                message: "perturbation parameters diverged".into(),
            });
        }
    }
    result.epoch_seconds = loop_start.elapsed().as_secs_f64() / config.epochs as f64;

    if let Some((loss, x_cf, keep)) = best {
        let candidate = materialize(graph, &local, &x_cf, &keep)?;
        if verify(oracle, graph, &candidate, target, spec, class)? {
            result.found = true;
            result.best_loss = Some(loss);
            result.counterfactual = Some(candidate);
        }
    }
    result.elapsed_seconds = started.elapsed().as_secs_f64();
    Ok(result)
}
