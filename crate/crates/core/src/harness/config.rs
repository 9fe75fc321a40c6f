//! Experiment configuration and its plain `key = value` file format.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::explain::baselines::DEFAULT_TRIALS;
use crate::explain::{ExplainConfig, TargetRule};
use crate::gnn::train::TrainConfig;
use crate::gnn::LayerKind;
use crate::graph::{DatasetFormat, Task};
use crate::loss::AlphaPolicy;

/// Environment variable holding the default output directory.
pub const OUT_ENV: &str = "COMBINEX_OUT";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExplainerKind {
    /// COMBINEX with the named alpha policy, or the configured one when `None`.
    Combinex(Option<String>),
    RandomEdges,
    RandomFeatures,
    Ego,
}

impl FromStr for ExplainerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "combinex" => Ok(ExplainerKind::Combinex(None)),
            "random-edges" => Ok(ExplainerKind::RandomEdges),
            "random-features" => Ok(ExplainerKind::RandomFeatures),
            "ego" => Ok(ExplainerKind::Ego),
            other => match other.strip_prefix("combinex-") {
                Some(policy) => {
                    AlphaPolicy::parse(policy, None, None, 1)?;
                    Ok(ExplainerKind::Combinex(Some(policy.to_string())))
                }
                None => Err(Error::Config(format!("unknown explainer `{other}`"))),
            },
        }
    }
}

impl ExplainerKind {
    fn spelling(&self) -> String {
        match self {
            ExplainerKind::Combinex(None) => "combinex".into(),
            ExplainerKind::Combinex(Some(p)) => format!("combinex-{p}"),
            ExplainerKind::RandomEdges => "random-edges".into(),
            ExplainerKind::RandomFeatures => "random-features".into(),
            ExplainerKind::Ego => "ego".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub format: DatasetFormat,
    /// Task the dataset must carry; taken from the dataset when `None`.
    pub task: Option<Task>,
    /// A saved oracle used for every fold instead of training one.
    pub oracle: Option<PathBuf>,
    pub train: TrainConfig,
    pub explainers: Vec<ExplainerKind>,
    /// Settings shared by the COMBINEX runs; `alpha` is resolved per explainer.
    pub explain: ExplainConfig,
    pub alpha_policy: String,
    pub alpha: Option<f64>,
    pub delta: Option<f64>,
    pub trials: usize,
    pub ego_hops: usize,
    pub folds: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads for the instances of a fold; 0 uses every core.
    pub jobs: usize,
    /// Keep per-epoch loss trajectories in `detail.json`.
    pub trace: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            format: DatasetFormat::EdgeList,
            task: None,
            oracle: None,
            train: TrainConfig::default(),
            explainers: vec![ExplainerKind::Combinex(None)],
            explain: ExplainConfig::default(),
            alpha_policy: "def".into(),
            alpha: None,
            delta: None,
            trials: DEFAULT_TRIALS,
            ego_hops: 1,
            folds: 4,
            seed: 0,
            out_dir: std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("results"), PathBuf::from),
            jobs: 0,
            trace: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected a boolean, got `{value}`"))),
    }
}

fn parse_list<T: FromStr<Err = Error>>(value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(T::from_str)
        .collect()
}

impl ExperimentConfig {
    /// Keys accepted by [`ExperimentConfig::set`]; each matches a CLI flag.
    pub const KEYS: &'static [&'static str] = &[
        "dataset",
        "format",
        "task",
        "oracle",
        "layer",
        "hidden",
        "train-epochs",
        "train-lr",
        "dropout",
        "validation-fraction",
        "explainers",
        "epochs",
        "lr",
        "alpha-policy",
        "alpha",
        "delta",
        "target-rule",
        "edge-init",
        "trials",
        "ego-hops",
        "folds",
        "seed",
        "out",
        "jobs",
        "trace",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = value.into(),
            "format" => self.format = value.parse()?,
            "task" => self.task = Some(value.parse()?),
            "oracle" => self.oracle = Some(value.into()),
            "layer" => {
                let hidden = self.train.hidden.clone();
                let kind: LayerKind = value.parse()?;
                let default_hidden = TrainConfig::for_kind(self.train.kind).hidden;
                self.train.kind = kind;
                self.train.hidden = if hidden == default_hidden {
                    TrainConfig::for_kind(kind).hidden
                } else {
                    hidden
                };
            }
            "hidden" => {
                self.train.hidden = value
                    .split(',')
                    .map(|w| parse::<usize>(key, w.trim()))
                    .collect::<Result<_>>()?
            }
            "train-epochs" => self.train.epochs = parse(key, value)?,
            "train-lr" => self.train.learning_rate = parse(key, value)?,
            "dropout" => self.train.dropout = parse(key, value)?,
            "validation-fraction" => self.train.validation_fraction = parse(key, value)?,
            "explainers" => self.explainers = parse_list(value)?,
            "epochs" => self.explain.epochs = parse(key, value)?,
            "lr" => self.explain.learning_rate = parse(key, value)?,
            "alpha-policy" => self.alpha_policy = value.into(),
            "alpha" => self.alpha = Some(parse(key, value)?),
            "delta" => self.delta = Some(parse(key, value)?),
            "target-rule" => self.explain.target = TargetRule::parse(value)?,
            "edge-init" => self.explain.edge_init = parse(key, value)?,
            "trials" => self.trials = parse(key, value)?,
            "ego-hops" => self.ego_hops = parse(key, value)?,
            "folds" => self.folds = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out_dir = value.into(),
            "jobs" => self.jobs = parse(key, value)?,
            "trace" => self.trace = parse_bool(key, value)?,
            other => return Err(Error::Config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a configuration file: one `key = value` per line, `#` starts a
    /// comment. Later lines win.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(message) => Error::Parse { line: i + 1, message },
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text).map_err(|e| e.context(path.display().to_string()))
    }

    /// The alpha policy used by `kind`, or `None` for the baselines.
    pub fn alpha_policy_for(&self, kind: &ExplainerKind) -> Result<Option<AlphaPolicy>> {
        match kind {
            ExplainerKind::Combinex(name) => {
                let name = name.as_deref().unwrap_or(&self.alpha_policy);
                AlphaPolicy::parse(name, self.alpha, self.delta, self.explain.epochs).map(Some)
            }
            _ => Ok(None),
        }
    }

    /// Report name of an explainer, e.g. `combinex-def`.
    pub fn explainer_name(&self, kind: &ExplainerKind) -> Result<String> {
        Ok(match self.alpha_policy_for(kind)? {
            Some(policy) => format!("combinex-{}", policy.short_name()),
            None => kind.spelling(),
        })
    }

    pub fn explain_config_for(&self, kind: &ExplainerKind) -> Result<ExplainConfig> {
        let mut config = self.explain.clone();
        if let Some(policy) = self.alpha_policy_for(kind)? {
            config.alpha = policy;
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds == 0 {
            return Err(Error::Config("folds must be at least 1".into()));
        }
        if !self.dataset.is_file() {
            return Err(Error::Config(format!("dataset `{}` does not exist", self.dataset.display())));
        }
        if let Some(oracle) = &self.oracle {
            if !oracle.is_file() {
                return Err(Error::Config(format!("oracle `{}` does not exist", oracle.display())));
            }
        }
        if self.explainers.is_empty() {
            return Err(Error::Config("no explainer selected".into()));
        }
        if self.train.hidden.is_empty() || self.train.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.train.validation_fraction) {
            return Err(Error::Config("validation fraction must lie in [0, 1)".into()));
        }
        let mut names = Vec::new();
        for kind in &self.explainers {
            self.explain_config_for(kind)?.validate()?;
            let name = self.explainer_name(kind)?;
            if names.contains(&name) {
                return Err(Error::Config(format!("explainer `{name}` selected twice")));
            }
            names.push(name);
        }
        Ok(())
    }

    /// Every setting as `key = value` lines in the file format, so the echo
    /// can be fed back through [`ExperimentConfig::apply_text`].
    pub fn echo(&self) -> String {
        let mut lines: Vec<(&str, String)> = vec![
            ("dataset", self.dataset.display().to_string()),
            ("format", self.format.as_str().into()),
        ];
        if let Some(task) = self.task {
            lines.push(("task", task.as_str().into()));
        }
        if let Some(oracle) = &self.oracle {
            lines.push(("oracle", oracle.display().to_string()));
        }
        let hidden: Vec<String> = self.train.hidden.iter().map(usize::to_string).collect();
        let explainers: Vec<String> = self.explainers.iter().map(ExplainerKind::spelling).collect();
        lines.extend([
            ("layer", self.train.kind.name()),
            ("hidden", hidden.join(",")),
            ("train-epochs", self.train.epochs.to_string()),
            ("train-lr", self.train.learning_rate.to_string()),
            ("dropout", self.train.dropout.to_string()),
            ("validation-fraction", self.train.validation_fraction.to_string()),
            ("explainers", explainers.join(",")),
            ("epochs", self.explain.epochs.to_string()),
            ("lr", self.explain.learning_rate.to_string()),
            ("alpha-policy", self.alpha_policy.clone()),
        ]);
        if let Some(alpha) = self.alpha {
            lines.push(("alpha", alpha.to_string()));
        }
        if let Some(delta) = self.delta {
            lines.push(("delta", delta.to_string()));
        }
        let rule = match self.explain.target {
            TargetRule::RunnerUp => "runner-up".to_string(),
            TargetRule::Class(k) => format!("class={k}"),
        };
        lines.extend([
            ("target-rule", rule),
            ("edge-init", self.explain.edge_init.to_string()),
            ("trials", self.trials.to_string()),
            ("ego-hops", self.ego_hops.to_string()),
            ("folds", self.folds.to_string()),
            ("seed", self.seed.to_string()),
            ("out", self.out_dir.display().to_string()),
            ("jobs", self.jobs.to_string()),
            ("trace", self.trace.to_string()),
        ]);
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
