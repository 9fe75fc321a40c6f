use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use combinex::gnn::{save_oracle, train, Target};
use combinex::graph::load_dataset;
use combinex::harness::{self, ExperimentConfig, ExplainerKind};
use combinex::metrics::{edge_sparsity, node_sparsity};

#[derive(Parser)]
#[command(name = "combinex", version, about = "Counterfactual explanations for graph neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an oracle on every labelled instance and save it.
    Train {
        #[command(flatten)]
        settings: Settings,
        /// Where to write the oracle; defaults to `<out>/oracle.bin`.
        #[arg(long)]
        save: Option<PathBuf>,
    },
    /// Explain one instance with every selected explainer.
    Explain {
        #[command(flatten)]
        settings: Settings,
        /// Graph index within the dataset.
        #[arg(long, default_value_t = 0)]
        graph: usize,
        /// Node to explain; omit for graph classification.
        #[arg(long)]
        node: Option<usize>,
    },
    /// Run the k-fold experiment and write the report files.
    Evaluate {
        #[command(flatten)]
        settings: Settings,
    },
    /// Measure per-epoch explanation time on growing synthetic graphs.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "250,500,1000")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 4)]
        degree: usize,
        #[arg(long, default_value_t = 8)]
        features: usize,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Flags mirroring the configuration-file keys. Flags override the file.
#[derive(Args)]
struct Settings {
    /// A `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    /// `edgelist` or `collection`.
    #[arg(long)]
    format: Option<String>,
    /// `node` or `graph`.
    #[arg(long)]
    task: Option<String>,
    /// A saved oracle to use instead of training.
    #[arg(long)]
    oracle: Option<String>,
    /// `gcn`, `graphconv`, `cheb` or `chebK`.
    #[arg(long)]
    layer: Option<String>,
    /// Comma-separated hidden widths.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    train_epochs: Option<String>,
    #[arg(long)]
    train_lr: Option<String>,
    #[arg(long)]
    dropout: Option<String>,
    #[arg(long)]
    validation_fraction: Option<String>,
    /// Comma-separated: combinex, combinex-<policy>, random-edges, random-features, ego.
    #[arg(long)]
    explainers: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    /// `def`, `feat`, `lin`, `exp`, `sin` or `dyn`.
    #[arg(long)]
    alpha_policy: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    /// `runner-up` or `class=K`.
    #[arg(long)]
    target_rule: Option<String>,
    #[arg(long)]
    edge_init: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    ego_hops: Option<String>,
    #[arg(long)]
    folds: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Output directory; defaults to $COMBINEX_OUT, then `results`.
    #[arg(long)]
    out: Option<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    jobs: Option<String>,
    #[arg(long)]
    trace: Option<String>,
}

impl Settings {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::default();
        if let Some(path) = &self.config {
            config.apply_file(path)?;
        }
        let flags = [
            ("dataset", &self.dataset),
            ("format", &self.format),
            ("task", &self.task),
            ("oracle", &self.oracle),
            ("layer", &self.layer),
            ("hidden", &self.hidden),
            ("train-epochs", &self.train_epochs),
            ("train-lr", &self.train_lr),
            ("dropout", &self.dropout),
            ("validation-fraction", &self.validation_fraction),
            ("explainers", &self.explainers),
            ("epochs", &self.epochs),
            ("lr", &self.lr),
            ("alpha-policy", &self.alpha_policy),
            ("alpha", &self.alpha),
            ("delta", &self.delta),
            ("target-rule", &self.target_rule),
            ("edge-init", &self.edge_init),
            ("trials", &self.trials),
            ("ego-hops", &self.ego_hops),
            ("folds", &self.folds),
            ("seed", &self.seed),
            ("out", &self.out),
            ("jobs", &self.jobs),
            ("trace", &self.trace),
        ];
        for (key, value) in flags {
            if let Some(value) = value {
                config.set(key, value).with_context(|| format!("--{key}"))?;
            }
        }
        Ok(config)
    }
}

fn train_command(settings: &Settings, save: Option<PathBuf>) -> Result<()> {
    let config = settings.resolve()?;
    let dataset = load_dataset(&config.dataset, config.format)?;
    let mut train_config = config.train.clone();
    train_config.seed = config.seed;
    let (oracle, report) = train::train_oracle(&dataset, &train_config)?;
    let path = save.unwrap_or_else(|| config.out_dir.join("oracle.bin"));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    }
    save_oracle(&oracle, &path)?;
    println!("{}", oracle.describe());
    println!(
        "best epoch {}, train accuracy {:.4}, validation accuracy {}",
        report.best_epoch,
        report.train_accuracy,
        report.validation_accuracy.map_or("n.d.".into(), |a| format!("{a:.4}"))
    );
    println!("saved {}", path.display());
    Ok(())
}

fn explain_command(settings: &Settings, graph_index: usize, node: Option<usize>) -> Result<()> {
    let config = settings.resolve()?;
    let Some(oracle_path) = &config.oracle else {
        bail!("explain needs --oracle (train one with `combinex train`)");
    };
    let dataset = load_dataset(&config.dataset, config.format)?;
    let oracle = combinex::gnn::load_oracle_for_task(oracle_path, dataset.task)?;
    let graph = dataset
        .graphs
        .get(graph_index)
        .with_context(|| format!("dataset has {} graphs", dataset.graphs.len()))?;
    let target = match node {
        Some(v) => Target::Node(v),
        None => Target::Graph,
    };
    let spec = &dataset.feature_spec;
    for kind in &config.explainers {
        let name = config.explainer_name(kind)?;
        let explain = config.explain_config_for(kind)?;
        let result = match kind {
            ExplainerKind::Combinex(_) => {
                combinex::explain::combinex_explain(&oracle, graph, target, spec, &explain)
            }
            ExplainerKind::RandomEdges => combinex::explain::baseline_random_edges(
                &oracle, graph, target, spec, explain.target, config.trials, config.seed,
            ),
            ExplainerKind::RandomFeatures => combinex::explain::baseline_random_features(
                &oracle, graph, target, spec, explain.target, config.trials, config.seed,
            ),
            ExplainerKind::Ego => {
                combinex::explain::baseline_ego(&oracle, graph, target, spec, explain.target, config.ego_hops)
            }
        };
        match result {
            Ok(r) => {
                let sparsity = match r.counterfactual.as_ref().filter(|_| r.found) {
                    Some(cf) => format!(
                        ", node sparsity {}, edge sparsity {}",
                        node_sparsity(graph, cf)?.map_or("n.d.".into(), |v| format!("{v:.4}")),
                        edge_sparsity(graph, cf)?.map_or("n.d.".into(), |v| format!("{v:.4}"))
                    ),
                    None => String::new(),
                };
                println!(
                    "{name}: prediction {} -> target {}: {} after {} epochs in {:.3}s{sparsity}",
                    r.factual_prediction,
                    r.target_class,
                    if r.found { "found" } else { "not found" },
                    r.epochs_run,
                    r.elapsed_seconds
                );
            }
            Err(e) => println!("{name}: skipped: {e}"),
        }
    }
    Ok(())
}

fn evaluate_command(settings: &Settings) -> Result<()> {
    let config = settings.resolve()?;
    let (report, files) = harness::run_experiment(&config)?;
    for fold in &report.folds {
        println!(
            "fold {}: train accuracy {:.3}, test accuracy {:.3}, {} test instances",
            fold.fold, fold.train_accuracy, fold.test_accuracy, fold.test_instances
        );
    }
    for e in &report.explainers {
        let m = &e.metrics;
        println!(
            "{}: validity {}, fidelity {}, distance {}, node sparsity {}, edge sparsity {}, {:.3}s per explanation",
            e.name,
            m.validity.display(),
            m.fidelity.display(),
            m.distribution_distance.display(),
            m.node_sparsity.display(),
            m.edge_sparsity.display(),
            e.seconds.mean.unwrap_or(0.0)
        );
    }
    println!("wrote {}", files.metrics.parent().unwrap_or(&files.metrics).display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { settings, save } => train_command(&settings, save),
        Command::Explain { settings, graph, node } => explain_command(&settings, graph, node),
        Command::Evaluate { settings } => evaluate_command(&settings),
        Command::Bench {
            sizes,
            degree,
            features,
            epochs,
            repeats,
            seed,
        } => {
            println!("nodes,edges,epoch_seconds");
            for p in harness::scaling_benchmark(&sizes, degree, features, epochs, repeats, seed)? {
                println!("{},{},{:.6}", p.nodes, p.edges, p.epoch_seconds);
            }
            Ok(())
        }
    }
}
