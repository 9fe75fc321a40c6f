mod common;

use combinex::gnn::LayerKind;
use combinex::graph::Task;
use common::gradcheck::{check, Outcome};

fn suite(kind: LayerKind, task: Task, seeds: std::ops::Range<u64>) -> Outcome {
    let mut total = Outcome::default();
    for seed in seeds {
        let o = check(seed, kind, task);
        assert!(o.worst < 1e-5, "{kind:?} {task:?} seed {seed}: relative error {}", o.worst);
        total.checked += o.checked;
        total.skipped += o.skipped;
        total.worst = total.worst.max(o.worst);
    }
    total
}

#[test]
fn gcn_chain_matches_central_differences() {
    let o = suite(LayerKind::Gcn, Task::Node, 0..20);
    assert!(o.checked > 20 * 5);
}

#[test]
fn graphconv_chain_matches_central_differences() {
    suite(LayerKind::GraphConv, Task::Node, 100..120);
}

#[test]
fn cheb_chains_match_central_differences() {
    suite(LayerKind::Cheb { k: 1 }, Task::Node, 200..220);
    suite(LayerKind::Cheb { k: 2 }, Task::Node, 300..320);
}

#[test]
fn pooled_graph_chain_matches_central_differences() {
    suite(LayerKind::Gcn, Task::Graph, 400..420);
    suite(LayerKind::GraphConv, Task::Graph, 500..520);
}
