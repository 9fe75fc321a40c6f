//! Random and ego-graph baselines.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_instance, factual_and_target, localize, materialize, verify, ExplanationResult, TargetRule};
use crate::error::{Error, Result};
use crate::gnn::{Oracle, Target};
use crate::graph::{FeatureSpec, Graph};

pub const DEFAULT_TRIALS: usize = 100;

fn finish(
    mut result: ExplanationResult,
    oracle: &Oracle,
    graph: &Graph,
    target: Target,
    spec: &FeatureSpec,
    candidate: Option<Graph>,
    started: Instant,
) -> Result<ExplanationResult> {
    if let Some(candidate) = candidate {
        if verify(oracle, graph, &candidate, target, spec, result.target_class)? {
            result.found = true;
            result.counterfactual = Some(candidate);
        }
    }
    result.elapsed_seconds = started.elapsed().as_secs_f64();
    if result.epochs_run > 0 {
        result.epoch_seconds = result.elapsed_seconds / result.epochs_run as f64;
    }
    Ok(result)
}

/// Deletes a uniformly random nonempty subset of the instance's edges per
/// round until the prediction reaches the target class.
pub fn baseline_random_edges(
    oracle: &Oracle,
    graph: &Graph,
    target: Target,
    spec: &FeatureSpec,
    rule: TargetRule,
    trials: usize,
    seed: u64,
) -> Result<ExplanationResult> {
    let started = Instant::now();
    check_instance(oracle, graph, target, spec)?;
    let (factual, class) = factual_and_target(oracle, graph, target, rule)?;
    let mut result = ExplanationResult::empty("random-edges", factual, class);
    let local = localize(oracle, graph, target)?;
    let m = local.graph.edge_count();
    let view = local.graph.edge_view();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidate = None;
    if m > 0 {
        for _ in 0..trials {
            result.epochs_run += 1;
            let keep = loop {
                let keep: Vec<bool> = (0..m).map(|_| rng.gen_bool(0.5)).collect();
                if keep.iter().any(|&k| !k) {
                    break keep;
                }
            };
            let weights: Vec<f64> = view.owner.iter().map(|&k| f64::from(u8::from(keep[k]))).collect();
            let (logits, _) = oracle.model_forward(local.graph.features.view(), &view, Some(&weights), local.target)?;
            if crate::gnn::argmax(&logits) == class {
                candidate = Some(materialize(graph, &local, &local.graph.features, &keep)?);
                break;
            }
        }
    }
    finish(result, oracle, graph, target, spec, candidate, started)
}

/// Resamples a random nonempty subset of feature entries within their bounds
/// per round; discrete columns draw integers.
pub fn baseline_random_features(
    oracle: &Oracle,
    graph: &Graph,
    target: Target,
    spec: &FeatureSpec,
    rule: TargetRule,
    trials: usize,
    seed: u64,
) -> Result<ExplanationResult> {
    let started = Instant::now();
    check_instance(oracle, graph, target, spec)?;
    let (factual, class) = factual_and_target(oracle, graph, target, rule)?;
    let mut result = ExplanationResult::empty("random-features", factual, class);
    let local = localize(oracle, graph, target)?;
    let (n, f) = local.graph.features.dim();
    let view = local.graph.edge_view();
    let keep = vec![true; local.graph.edge_count()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidate = None;
    if n * f > 0 {
        for _ in 0..trials {
            result.epochs_run += 1;
            let mut x = local.graph.features.clone();
            let mut touched = false;
            while !touched {
                for i in 0..n {
                    for j in 0..f {
                        if rng.gen_bool(0.5) {
                            touched = true;
                            let (lo, hi) = (spec.lower[j], spec.upper[j]);
                            x[[i, j]] = if spec.discrete[j] {
                                rng.gen_range(lo.ceil() as i64..=hi.floor() as i64) as f64
                            } else if hi > lo {
                                rng.gen_range(lo..=hi)
                            } else {
                                lo
                            };
                        }
                    }
                }
            }
            let (logits, _) = oracle.model_forward(x.view(), &view, None, local.target)?;
            if crate::gnn::argmax(&logits) == class {
                candidate = Some(materialize(graph, &local, &x, &keep)?);
                break;
            }
        }
    }
    finish(result, oracle, graph, target, spec, candidate, started)
}

/// Keeps only the edges among nodes within `k` hops of the target node.
pub fn baseline_ego(
    oracle: &Oracle,
    graph: &Graph,
    target: Target,
    spec: &FeatureSpec,
    rule: TargetRule,
    k: usize,
) -> Result<ExplanationResult> {
    let started = Instant::now();
    let Target::Node(center) = target else {
        return Err(Error::Unsupported("the ego baseline explains node instances only".into()));
    };
    check_instance(oracle, graph, target, spec)?;
    let (factual, class) = factual_and_target(oracle, graph, target, rule)?;
    let mut result = ExplanationResult::empty("ego", factual, class);
    result.epochs_run = 1;
    let dist = graph.hop_distances(center);
    let inside = |v: usize| dist[v].is_some_and(|d| d <= k);
    let keep: Vec<bool> = graph.edges().iter().map(|&(u, v)| inside(u) && inside(v)).collect();
    let candidate = graph.retain_edges(&keep)?;
    let flipped = oracle.predict(&candidate, target)? == class;
    finish(result, oracle, graph, target, spec, flipped.then_some(candidate), started)
}
