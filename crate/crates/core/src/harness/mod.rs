//! Experiment orchestration: fold splitting, seeding, the train/explain/
//! evaluate pipeline, timing and report files.

pub mod config;
pub mod report;

use std::time::Instant;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

pub use config::{ExperimentConfig, ExplainerKind, OUT_ENV};
pub use report::{write_report, ReportFiles};

use crate::error::{Error, Result};
use crate::explain::{
    baseline_ego, baseline_random_edges, baseline_random_features, combinex_explain, ExplainConfig,
    ExplanationResult, TargetRule,
};
use crate::gnn::train::{accuracy, train_oracle_on, TrainReport};
use crate::gnn::{argmax, load_oracle_for_task, LayerKind, Oracle, Target};
use crate::graph::{load_dataset, synthetic, Dataset, FeatureSpec, InstanceRef, Task};
use crate::loss::LossBreakdown;
use crate::metrics::{aggregate_report, fold_metrics, mean_embedding, node_sparsity, edge_sparsity, Evaluated, FoldMetrics, MetricReport, Summary};

const STREAM_TRAIN: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_EXPLAIN: u64 = 3;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sub-seed for the position `path` below `root`. Each coordinate is mixed in
/// turn, so two paths that differ anywhere give unrelated seeds.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(root), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// FNV-1a, used to key explainer seeds by name rather than by position.
fn name_key(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Fold index of every one of `count` instances: a seeded shuffle dealt
/// round-robin, so fold sizes differ by at most one.
pub fn kfold_assignment(count: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; count];
    for (i, &idx) in order.iter().enumerate() {
        assignment[idx] = i % folds.max(1);
    }
    assignment
}

/// Train and test instances of one fold. A single fold trains and explains
/// on every instance.
#[derive(Debug, Clone)]
pub struct FoldSplit {
    pub train: Vec<InstanceRef>,
    pub test: Vec<InstanceRef>,
}

pub fn fold_splits(dataset: &Dataset, folds: usize, seed: u64) -> Vec<FoldSplit> {
    let instances = dataset.instances();
    let (assignment, k) = match &dataset.folds {
        Some(given) => (given.clone(), given.iter().max().map_or(1, |m| m + 1)),
        None => (kfold_assignment(instances.len(), folds, derive_seed(seed, &[STREAM_SPLIT])), folds),
    };
    if k <= 1 {
        return vec![FoldSplit {
            train: instances.clone(),
            test: instances,
        }];
    }
    (0..k)
        .map(|fold| {
            let (test, train): (Vec<_>, Vec<_>) =
                instances.iter().zip(&assignment).partition(|&(_, &a)| a == fold);
            FoldSplit {
                train: train.into_iter().map(|(i, _)| *i).collect(),
                test: test.into_iter().map(|(i, _)| *i).collect(),
            }
        })
        .collect()
}

pub fn instance_target(instance: InstanceRef) -> Target {
    match instance.node {
        Some(v) => Target::Node(v),
        None => Target::Graph,
    }
}

/// Outcome of one explainer on one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Found,
    NotFound,
    /// The instance failed the explainer's precondition.
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct InstanceRecord {
    pub fold: usize,
    pub graph: usize,
    pub node: Option<usize>,
    pub explainer: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub label: usize,
    pub factual_prediction: usize,
    pub target_class: usize,
    pub best_loss: Option<f64>,
    pub epochs_run: usize,
    pub node_sparsity: Option<f64>,
    pub edge_sparsity: Option<f64>,
    pub elapsed_seconds: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub trajectory: Vec<LossBreakdown>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExplainerReport {
    pub name: String,
    pub metrics: MetricReport,
    pub folds: Vec<FoldMetrics>,
    /// Wall time per attempted explanation.
    pub seconds: Summary,
    pub epoch_seconds: Summary,
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldInfo {
    pub fold: usize,
    pub train_instances: usize,
    pub test_instances: usize,
    /// Test instances passed over for an unconfident prediction.
    pub unconfident: usize,
    pub train: Option<TrainReport>,
    /// Oracle accuracy on the training instances.
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub dataset: String,
    pub task: Task,
    pub layer: String,
    pub seed: u64,
    pub folds: Vec<FoldInfo>,
    pub explainers: Vec<ExplainerReport>,
    pub records: Vec<InstanceRecord>,
    pub elapsed_seconds: f64,
}

/// Top logit strictly above the runner-up.
fn is_confident(logits: &Array1<f64>) -> bool {
    let top = argmax(logits);
    logits.iter().enumerate().all(|(c, &v)| c == top || v < logits[top])
}

fn is_precondition(error: &Error) -> bool {
    matches!(error, Error::AlreadyCounterfactual { .. } | Error::Unsupported(_))
}

struct Job<'a> {
    instance: InstanceRef,
    explainer: usize,
    name: &'a str,
}

#[allow(clippy::too_many_arguments)]
fn explain_one(
    config: &ExperimentConfig,
    kind: &ExplainerKind,
    explain: &ExplainConfig,
    oracle: &Oracle,
    dataset: &Dataset,
    instance: InstanceRef,
    seed: u64,
) -> Result<ExplanationResult> {
    let graph = &dataset.graphs[instance.graph];
    let target = instance_target(instance);
    let spec = &dataset.feature_spec;
    let rule = explain.target;
    match kind {
        ExplainerKind::Combinex(_) => {
            let cfg = ExplainConfig { seed, ..explain.clone() };
            combinex_explain(oracle, graph, target, spec, &cfg)
        }
        ExplainerKind::RandomEdges => baseline_random_edges(oracle, graph, target, spec, rule, config.trials, seed),
        ExplainerKind::RandomFeatures => {
            baseline_random_features(oracle, graph, target, spec, rule, config.trials, seed)
        }
        ExplainerKind::Ego => baseline_ego(oracle, graph, target, spec, rule, config.ego_hops),
    }
}

fn describe(instance: InstanceRef) -> String {
    match instance.node {
        Some(v) => format!("graph {} node {v}", instance.graph),
        None => format!("graph {}", instance.graph),
    }
}

/// Runs every fold and returns the in-memory report without writing files.
pub fn execute(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let started = Instant::now();
    let dataset = load_dataset(&config.dataset, config.format)?;
    if let Some(task) = config.task {
        if task != dataset.task {
            return Err(Error::Config(format!(
                "configured task {} but the dataset holds {} instances",
                task.as_str(),
                dataset.task.as_str()
            )));
        }
    }
    let loaded = match &config.oracle {
        Some(path) => Some(load_oracle_for_task(path, dataset.task)?),
        None => None,
    };
    let names: Vec<String> = config.explainers.iter().map(|k| config.explainer_name(k)).collect::<Result<_>>()?;
    let explain_configs: Vec<ExplainConfig> =
        config.explainers.iter().map(|k| config.explain_config_for(k)).collect::<Result<_>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let mut fold_infos = Vec::new();
    let mut fold_metrics_per: Vec<Vec<FoldMetrics>> = vec![Vec::new(); names.len()];
    let mut records = Vec::new();
    for (fold, split) in fold_splits(&dataset, config.folds, config.seed).into_iter().enumerate() {
        let ctx = |e: Error| e.context(format!("fold {fold}"));
        let (oracle, train) = match &loaded {
            Some(o) => (o.clone(), None),
            None => {
                let mut train = config.train.clone();
                train.seed = derive_seed(config.seed, &[STREAM_TRAIN, fold as u64]);
                let (o, r) = train_oracle_on(&dataset, &split.train, &train).map_err(ctx)?;
                (o, Some(r))
            }
        };
        let train_accuracy = accuracy(&oracle, &dataset, &split.train).map_err(ctx)?;
        let test_accuracy = accuracy(&oracle, &dataset, &split.test).map_err(ctx)?;
        let mean = mean_embedding(&oracle, &dataset).map_err(ctx)?;

        let mut selected = Vec::new();
        let mut unconfident = 0;
        for &instance in &split.test {
            let graph = &dataset.graphs[instance.graph];
            let target = instance_target(instance);
            let (logits, _) = oracle
                .model_forward(graph.features.view(), &graph.edge_view(), None, target)
                .map_err(|e| ctx(e.context(describe(instance))))?;
            if !is_confident(&logits) {
                unconfident += 1;
                continue;
            }
            selected.push(instance);
        }

        let jobs: Vec<Job> = selected
            .iter()
            .flat_map(|&instance| {
                names
                    .iter()
                    .enumerate()
                    .map(move |(explainer, name)| Job { instance, explainer, name })
            })
            .collect();
        let outcomes: Vec<Result<ExplanationResult>> = pool.install(|| {
            jobs.par_iter()
                .map(|job| {
                    let node = job.instance.node.map_or(u64::MAX, |v| v as u64);
                    let seed = derive_seed(
                        config.seed,
                        &[STREAM_EXPLAIN, fold as u64, job.instance.graph as u64, node, name_key(job.name)],
                    );
                    explain_one(
                        config,
                        &config.explainers[job.explainer],
                        &explain_configs[job.explainer],
                        &oracle,
                        &dataset,
                        job.instance,
                        seed,
                    )
                })
                .collect()
        });

        let mut per_explainer: Vec<Vec<(InstanceRef, ExplanationResult)>> = vec![Vec::new(); names.len()];
        for (job, outcome) in jobs.iter().zip(outcomes) {
            let instance = job.instance;
            let label = dataset.label_of(instance).unwrap_or(0);
            let graph = &dataset.graphs[instance.graph];
            match outcome {
                Ok(result) => {
                    let (ns, es) = match result.counterfactual.as_ref().filter(|_| result.found) {
                        Some(cf) => (node_sparsity(graph, cf)?, edge_sparsity(graph, cf)?),
                        None => (None, None),
                    };
                    records.push(InstanceRecord {
                        fold,
                        graph: instance.graph,
                        node: instance.node,
                        explainer: job.name.to_string(),
                        status: if result.found { Status::Found } else { Status::NotFound },
                        reason: None,
                        label,
                        factual_prediction: result.factual_prediction,
                        target_class: result.target_class,
                        best_loss: result.best_loss,
                        epochs_run: result.epochs_run,
                        node_sparsity: ns,
                        edge_sparsity: es,
                        elapsed_seconds: result.elapsed_seconds,
                        trajectory: if config.trace { result.trajectory.clone() } else { Vec::new() },
                    });
                    per_explainer[job.explainer].push((instance, result));
                }
                Err(e) if is_precondition(&e) => {
                    let (logits, _) =
                        oracle.model_forward(graph.features.view(), &graph.edge_view(), None, instance_target(instance))?;
                    records.push(InstanceRecord {
                        fold,
                        graph: instance.graph,
                        node: instance.node,
                        explainer: job.name.to_string(),
                        status: Status::Skipped,
                        reason: Some(e.to_string()),
                        label,
                        factual_prediction: argmax(&logits),
                        target_class: TargetRule::resolve(explain_configs[job.explainer].target, &logits).unwrap_or(0),
                        best_loss: None,
                        epochs_run: 0,
                        node_sparsity: None,
                        edge_sparsity: None,
                        elapsed_seconds: 0.0,
                        trajectory: Vec::new(),
                    });
                }
                Err(e) => {
                    return Err(e.context(format!("fold {fold}, {}, explainer {}", describe(instance), job.name)));
                }
            }
        }
        for (explainer, results) in per_explainer.iter().enumerate() {
            let items: Vec<Evaluated> = results
                .iter()
                .map(|(instance, result)| Evaluated {
                    factual: &dataset.graphs[instance.graph],
                    target: instance_target(*instance),
                    label: dataset.label_of(*instance).unwrap_or(0),
                    result,
                })
                .collect();
            fold_metrics_per[explainer].push(fold_metrics(&oracle, &items, &mean).map_err(ctx)?);
        }
        fold_infos.push(FoldInfo {
            fold,
            train_instances: split.train.len(),
            test_instances: split.test.len(),
            unconfident,
            train,
            train_accuracy,
            test_accuracy,
        });
    }

    let explainers = names
        .iter()
        .zip(fold_metrics_per)
        .map(|(name, folds)| {
            let attempted = records.iter().filter(|r| &r.explainer == name && r.status != Status::Skipped);
            let (seconds, epoch_seconds): (Vec<f64>, Vec<f64>) = attempted
                .map(|r| (r.elapsed_seconds, r.elapsed_seconds / r.epochs_run.max(1) as f64))
                .unzip();
            ExplainerReport {
                name: name.clone(),
                metrics: aggregate_report(&folds),
                folds,
                seconds: Summary::of(&seconds),
                epoch_seconds: Summary::of(&epoch_seconds),
            }
        })
        .collect();
    Ok(ExperimentReport {
        dataset: dataset.name.clone(),
        task: dataset.task,
        layer: config.train.kind.name(),
        seed: config.seed,
        folds: fold_infos,
        explainers,
        records,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Runs the experiment and writes `metrics.csv`, `detail.json`, `timing.csv`
/// and `manifest.txt` into the configured output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(ExperimentReport, ReportFiles)> {
    let report = execute(config)?;
    let files = write_report(config, &report)?;
    Ok((report, files))
}

/// Mean and spread of the wall time per explanation of every explainer, all
/// run on the same instances.
#[derive(Debug, Clone, Serialize)]
pub struct TimingRow {
    pub explainer: String,
    pub instances: usize,
    pub seconds: Summary,
    pub epoch_seconds: Summary,
}

pub fn timing_comparison(config: &ExperimentConfig) -> Result<Vec<TimingRow>> {
    Ok(timing_table(&execute(config)?))
}

pub fn timing_table(report: &ExperimentReport) -> Vec<TimingRow> {
    report
        .explainers
        .iter()
        .map(|e| TimingRow {
            explainer: e.name.clone(),
            instances: report
                .records
                .iter()
                .filter(|r| r.explainer == e.name && r.status != Status::Skipped)
                .count(),
            seconds: e.seconds,
            epoch_seconds: e.epoch_seconds,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScalingPoint {
    pub nodes: usize,
    pub edges: usize,
    pub epoch_seconds: f64,
}

/// Per-epoch COMBINEX time on random sparse graphs of the given sizes,
/// explained as whole graphs by a randomly initialised graph-level GCN.
/// Each size keeps the average degree and the feature count fixed. The
/// fastest of `repeats` runs is reported.
pub fn scaling_benchmark(
    sizes: &[usize],
    degree: usize,
    features: usize,
    epochs: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<ScalingPoint>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let oracle = Oracle::init(&mut rng, LayerKind::Gcn, features, &[16, 16], 2, Task::Graph, 0.0)?;
    let spec = FeatureSpec::new(vec![true; features], vec![0.0; features], vec![1.0; features])?;
    let config = ExplainConfig {
        epochs,
        target: TargetRule::RunnerUp,
        ..ExplainConfig::default()
    };
    sizes
        .iter()
        .map(|&n| {
            let graph = synthetic::random_sparse(&mut rng, n, n * degree / 2, features);
            let mut best = f64::INFINITY;
            for _ in 0..repeats.max(1) {
                let result = combinex_explain(&oracle, &graph, Target::Graph, &spec, &config)?;
                best = best.min(result.epoch_seconds);
            }
            Ok(ScalingPoint {
                nodes: n,
                edges: graph.edge_count(),
                epoch_seconds: best,
            })
        })
        .collect()
}
