mod common;

use std::collections::HashMap;

use combinex::explain::{combinex_explain, ExplainConfig, TargetRule};
use combinex::gnn::{LayerKind, Target};
use combinex::graph::{save_dataset, synthetic, Dataset, DatasetFormat, Task};
use combinex::harness::{self, fold_splits, ExperimentConfig, Status};
use combinex::loss::AlphaPolicy;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn counterfactuals_agree_with_exhaustive_search() {
    let mut reachable = 0;
    let mut found = 0;
    for seed in 0..20 {
        let v = common::brute::compare(seed);
        assert!(v.valid, "seed {seed}: counterfactual rejected by the reference forward pass");
        assert!(v.exists || !v.found, "seed {seed}: found a counterfactual exhaustive search rules out");
        reachable += usize::from(v.exists);
        found += usize::from(v.found);
    }
    assert!(found <= reachable);
}

#[test]
fn repeated_runs_are_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = common::random_binary_graph(&mut rng, 8, 3, 0.4);
    let oracle = common::random_oracle(&mut rng, LayerKind::Gcn, 3, &[6, 6], 3, Task::Node);
    let spec = common::unit_spec(3, true);
    let config = ExplainConfig {
        epochs: 120,
        alpha: AlphaPolicy::Dynamic,
        ..ExplainConfig::default()
    };
    let a = combinex_explain(&oracle, &g, Target::Node(2), &spec, &config).unwrap();
    let b = combinex_explain(&oracle, &g, Target::Node(2), &spec, &config).unwrap();
    assert_eq!(a.trajectory, b.trajectory);
    assert_eq!(a.accepted_losses, b.accepted_losses);
    assert_eq!(a.found, b.found);
    assert_eq!(a.counterfactual, b.counterfactual);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn feature_policy_never_touches_edges(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(3..9);
        let g = common::random_binary_graph(&mut rng, n, 3, 0.4);
        let oracle = common::random_oracle(&mut rng, LayerKind::GraphConv, 3, &[5], 2, Task::Node);
        let config = ExplainConfig { epochs: 80, alpha: AlphaPolicy::Feature, ..ExplainConfig::default() };
        let node = rng.gen_range(0..n);
        let res = combinex_explain(&oracle, &g, Target::Node(node), &common::unit_spec(3, true), &config).unwrap();
        if let Some(cf) = res.counterfactual.as_ref().filter(|_| res.found) {
            prop_assert_eq!(cf.edges(), g.edges());
        }
    }

    #[test]
    fn folds_partition_the_instances(count in 1usize..60, folds in 1usize..7, seed in any::<u64>()) {
        let graphs = (0..count).map(|i| synthetic::path(2, 1).with_graph_label(i % 2)).collect();
        let ds = Dataset::new("p", graphs, Task::Graph).unwrap();
        let splits = fold_splits(&ds, folds, seed);
        let mut seen = vec![0; count];
        for s in &splits {
            for t in &s.test {
                seen[t.graph] += 1;
                prop_assert!(folds == 1 || !s.train.contains(t));
            }
            prop_assert_eq!(s.train.len() + if folds == 1 { 0 } else { s.test.len() }, count);
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }
}

fn small_experiment(dir: &std::path::Path, out: &str) -> ExperimentConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ds = synthetic::triangle_vs_path(&mut rng, 16, 2);
    let path = dir.join("toy.txt");
    save_dataset(&ds, &path, DatasetFormat::Collection).unwrap();
    let mut config = ExperimentConfig::default();
    config
        .apply_text(&format!(
            "dataset = {}\nformat = collection\nhidden = 8,8\ntrain-epochs = 60\nepochs = 60\nfolds = 2\nseed = 4\n\
             explainers = combinex, combinex-feat, random-edges, random-features, ego\nout = {}\n",
            path.display(),
            dir.join(out).display()
        ))
        .unwrap();
    config
}

#[test]
fn reruns_reproduce_the_metrics_file() {
    let dir = tempfile::tempdir().unwrap();
    let (_, first) = harness::run_experiment(&small_experiment(dir.path(), "a")).unwrap();
    let (report, second) = harness::run_experiment(&small_experiment(dir.path(), "b")).unwrap();
    assert_eq!(std::fs::read(&first.metrics).unwrap(), std::fs::read(&second.metrics).unwrap());
    assert!(second.detail.exists() && second.timing.exists() && second.manifest.exists());

    // every attempted instance appears once per explainer
    let mut per: HashMap<(usize, usize, String), usize> = HashMap::new();
    for r in &report.records {
        *per.entry((r.fold, r.graph, r.explainer.clone())).or_default() += 1;
    }
    assert!(per.values().all(|&c| c == 1));
    let names: Vec<_> = report.explainers.iter().map(|e| e.name.clone()).collect();
    assert_eq!(names, ["combinex-def", "combinex-feat", "random-edges", "random-features", "ego"]);
    let instances = report.records.len() / names.len();
    assert_eq!(report.records.len(), instances * names.len());
    // the ego baseline only handles node tasks
    assert!(report.records.iter().filter(|r| r.explainer == "ego").all(|r| r.status == Status::Skipped));
    let ego = &report.explainers[4].metrics;
    assert_eq!(ego.attempted, 0);
    assert!(!ego.validity.is_defined());
    let csv = std::fs::read_to_string(&second.metrics).unwrap();
    assert!(csv.lines().last().unwrap().contains("n.d."));
}

#[test]
fn missing_dataset_fails_before_any_work() {
    let config = ExperimentConfig {
        dataset: "/nonexistent/data.txt".into(),
        out_dir: std::env::temp_dir().join("combinex-never-written"),
        ..ExperimentConfig::default()
    };
    assert!(harness::run_experiment(&config).is_err());
    assert!(!config.out_dir.exists());
}

#[test]
fn single_fold_reports_zero_spread() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_experiment(dir.path(), "one");
    config.set("folds", "1").unwrap();
    config.set("explainers", "random-edges").unwrap();
    config.explain.target = TargetRule::RunnerUp;
    let (report, _) = harness::run_experiment(&config).unwrap();
    let m = &report.explainers[0].metrics;
    assert_eq!(m.folds, 1);
    assert_eq!(m.validity.std, Some(0.0));
}
