//! Counterfactual objective and the alpha schedules that weight it.
//!
//! `L_total = eta * L_CE + (1 - alpha) * L_E + alpha * (L_d + L_c)` where
//! `L_E = sum |sigmoid(EP) - 1|` over edges, `L_d` is the mean absolute change
//! over discrete entries and `L_c` the mean squared change over continuous
//! entries.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::argmax;
use crate::graph::FeatureSpec;
use crate::perturb::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cross_entropy: f64,
    pub edge: f64,
    pub discrete: f64,
    pub continuous: f64,
    pub features: f64,
    pub eta: f64,
    pub alpha: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Recombines the components; equals `total` exactly for emitted values.
    pub fn recombine(&self) -> f64 {
        self.eta * self.cross_entropy + (1.0 - self.alpha) * self.edge + self.alpha * self.features
    }
}

/// When the cross-entropy term is switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaMode {
    /// On while the prediction differs from the target.
    #[default]
    UntilFlipped,
    /// On once the prediction already equals the target.
    WhenFlipped,
}

impl EtaMode {
    pub fn eta(self, predicted: usize, target: usize) -> f64 {
        let flipped = predicted == target;
        match self {
            EtaMode::UntilFlipped => f64::from(u8::from(!flipped)),
            EtaMode::WhenFlipped => f64::from(u8::from(flipped)),
        }
    }
}

/// Inputs shared by the loss and its gradient.
pub struct LossInputs<'a> {
    pub logits: &'a Array1<f64>,
    pub target: usize,
    pub edge_logits: &'a [f64],
    pub x: &'a Array2<f64>,
    pub spec: &'a FeatureSpec,
    pub x_discrete: &'a Array2<f64>,
    pub x_continuous: &'a Array2<f64>,
    /// The prediction that gates the cross-entropy term.
    pub gate_prediction: usize,
    pub eta_mode: EtaMode,
}

struct Components {
    cross_entropy: f64,
    edge: f64,
    discrete: f64,
    continuous: f64,
    discrete_count: usize,
    continuous_count: usize,
    eta: f64,
}

fn components(inputs: &LossInputs<'_>) -> Result<Components> {
    let classes = inputs.logits.len();
    if inputs.target >= classes {
        return Err(Error::Class {
            class: inputs.target,
            count: classes,
        });
    }
    let (n, f) = inputs.x.dim();
    if inputs.spec.dim() != f || inputs.x_discrete.dim() != (n, f) || inputs.x_continuous.dim() != (n, f) {
        return Err(Error::dim("loss inputs disagree on the feature shape"));
    }
    let max = inputs.logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = inputs.logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    let cross_entropy = lse - inputs.logits[inputs.target];
    let edge = inputs.edge_logits.iter().map(|&e| (sigmoid(e) - 1.0).abs()).sum();
    let discrete_cols = inputs.spec.discrete.iter().filter(|&&d| d).count();
    let (discrete_count, continuous_count) = (n * discrete_cols, n * (f - discrete_cols));
    let (mut l1, mut l2) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..f {
            if inputs.spec.discrete[j] {
                l1 += (inputs.x[[i, j]] - inputs.x_discrete[[i, j]]).abs();
            } else {
                let d = inputs.x[[i, j]] - inputs.x_continuous[[i, j]];
                l2 += d * d;
            }
        }
    }
    let mean = |s: f64, c: usize| if c == 0 { 0.0 } else { s / c as f64 };
    Ok(Components {
        cross_entropy,
        edge,
        discrete: mean(l1, discrete_count),
        continuous: mean(l2, continuous_count),
        discrete_count,
        continuous_count,
        eta: inputs.eta_mode.eta(inputs.gate_prediction, inputs.target),
    })
}

/// Edge and feature terms only, used by schedules that look at them.
pub fn partial_losses(inputs: &LossInputs<'_>) -> Result<(f64, f64)> {
    let c = components(inputs)?;
    Ok((c.edge, c.discrete + c.continuous))
}

pub fn get_loss(inputs: &LossInputs<'_>, alpha: f64) -> Result<LossBreakdown> {
    let c = components(inputs)?;
    let features = c.discrete + c.continuous;
    let mut out = LossBreakdown {
        cross_entropy: c.cross_entropy,
        edge: c.edge,
        discrete: c.discrete,
        continuous: c.continuous,
        features,
        eta: c.eta,
        alpha,
        total: 0.0,
    };
    out.total = out.recombine();
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct LossGradients {
    pub logits: Array1<f64>,
    pub edge_logits: Vec<f64>,
    pub x_discrete: Array2<f64>,
    pub x_continuous: Array2<f64>,
}

/// Gradients of `upstream * L_total`; `eta` is a constant gate.
pub fn get_loss_backward(inputs: &LossInputs<'_>, alpha: f64, upstream: f64) -> Result<LossGradients> {
    let c = components(inputs)?;
    let classes = inputs.logits.len();
    let mut logits = Array1::zeros(classes);
    let ce_scale = upstream * c.eta;
    if ce_scale != 0.0 {
        let max = inputs.logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let exp = inputs.logits.mapv(|z| (z - max).exp());
        let total = exp.sum();
        for k in 0..classes {
            let onehot = if k == inputs.target { 1.0 } else { 0.0 };
            logits[k] = ce_scale * (exp[k] / total - onehot);
        }
    }
    let edge_scale = upstream * (1.0 - alpha);
    // |sigmoid - 1| = 1 - sigmoid
    let edge_logits = inputs
        .edge_logits
        .iter()
        .map(|&e| {
            let s = sigmoid(e);
            -edge_scale * s * (1.0 - s)
        })
        .collect();
    let (n, f) = inputs.x.dim();
    let mut x_discrete = Array2::zeros((n, f));
    let mut x_continuous = Array2::zeros((n, f));
    let d_scale = if c.discrete_count == 0 { 0.0 } else { upstream * alpha / c.discrete_count as f64 };
    let c_scale = if c.continuous_count == 0 { 0.0 } else { upstream * alpha / c.continuous_count as f64 };
    for i in 0..n {
        for j in 0..f {
            if inputs.spec.discrete[j] {
                let d = inputs.x_discrete[[i, j]] - inputs.x[[i, j]];
                // subgradient 0 at the kink
                x_discrete[[i, j]] = d_scale * if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
            } else {
                x_continuous[[i, j]] = c_scale * 2.0 * (inputs.x_continuous[[i, j]] - inputs.x[[i, j]]);
            }
        }
    }
    Ok(LossGradients {
        logits,
        edge_logits,
        x_discrete,
        x_continuous,
    })
}

/// Prediction used to gate the cross-entropy term.
pub fn prediction(logits: &Array1<f64>) -> usize {
    argmax(logits)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase")]
pub enum AlphaPolicy {
    Constant { alpha: f64 },
    /// `alpha = 1`: only features are perturbed.
    Feature,
    Linear,
    Exponential { delta: f64 },
    Sinusoidal,
    Dynamic,
}

impl AlphaPolicy {
    pub const DEFAULT_ALPHA: f64 = 0.5;

    pub fn short_name(&self) -> &'static str {
        match self {
            AlphaPolicy::Constant { .. } => "def",
            AlphaPolicy::Feature => "feat",
            AlphaPolicy::Linear => "lin",
            AlphaPolicy::Exponential { .. } => "exp",
            AlphaPolicy::Sinusoidal => "sin",
            AlphaPolicy::Dynamic => "dyn",
        }
    }

    /// Parses `const|def`, `feat`, `lin`, `exp`, `sin`, `dyn`. The exponential
    /// rate defaults to a fifth of the epoch budget.
    pub fn parse(name: &str, alpha: Option<f64>, delta: Option<f64>, epochs_max: usize) -> Result<Self> {
        let policy = match name {
            "const" | "def" | "constant" => AlphaPolicy::Constant {
                alpha: alpha.unwrap_or(Self::DEFAULT_ALPHA),
            },
            "feat" | "feature" => AlphaPolicy::Feature,
            "lin" | "linear" => AlphaPolicy::Linear,
            "exp" | "exponential" => AlphaPolicy::Exponential {
                delta: delta.unwrap_or(epochs_max as f64 / 5.0),
            },
            "sin" | "sinusoidal" | "cos" => AlphaPolicy::Sinusoidal,
            "dyn" | "dynamic" => AlphaPolicy::Dynamic,
            other => return Err(Error::Config(format!("unknown alpha policy `{other}`"))),
        };
        policy.validate(epochs_max)?;
        Ok(policy)
    }

    pub fn validate(&self, epochs_max: usize) -> Result<()> {
        match *self {
            AlphaPolicy::Constant { alpha } if !(0.0..=1.0).contains(&alpha) => {
                Err(Error::Config(format!("constant alpha {alpha} outside [0, 1]")))
            }
            AlphaPolicy::Exponential { delta } if !(delta > 0.0) => {
                Err(Error::Config(format!("decay rate {delta} must be positive")))
            }
            AlphaPolicy::Linear | AlphaPolicy::Sinusoidal if epochs_max == 0 => Err(Error::Config(
                "linear and sinusoidal schedules need epochs_max > 0".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Scheduled alpha for `epoch`.
pub fn get_alpha(epoch: usize, edge_loss: f64, feature_loss: f64, policy: &AlphaPolicy, epochs_max: usize) -> Result<f64> {
    policy.validate(epochs_max)?;
    let progress = || epoch as f64 / epochs_max as f64;
    Ok(match *policy {
        AlphaPolicy::Linear => (1.0 - progress()).max(0.0),
        AlphaPolicy::Exponential { delta } => (-(epoch as f64) / delta).exp().max(0.0),
        AlphaPolicy::Sinusoidal => (0.5 * (1.0 + (std::f64::consts::PI * progress()).cos())).max(0.0),
        AlphaPolicy::Dynamic => {
            if edge_loss > feature_loss {
                0.0
            } else {
                1.0
            }
        }
        AlphaPolicy::Constant { alpha } => alpha,
        AlphaPolicy::Feature => 1.0,
    })
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    fn spec() -> FeatureSpec {
        FeatureSpec::new(vec![true, false], vec![0.0, -2.0], vec![1.0, 2.0]).unwrap()
    }

    #[test]
    fn saturated_edges_cost_nothing() {
        let x = array![[1.0, 0.5]];
        let xd = array![[1.0, 0.0]];
        let xc = array![[0.0, 0.5]];
        let logits = array![0.0, 1.0];
        let inputs = LossInputs {
            logits: &logits,
            target: 0,
            edge_logits: &[40.0, 60.0],
            x: &x,
            spec: &spec(),
            x_discrete: &xd,
            x_continuous: &xc,
            gate_prediction: 1,
            eta_mode: EtaMode::UntilFlipped,
        };
        assert_eq!(get_loss(&inputs, 0.5).unwrap().edge, 0.0);
    }

    #[test]
    fn half_open_edges_and_untouched_features() {
        let x = array![[1.0, 0.5], [0.0, -1.0]];
        let xd = array![[1.0, 0.0], [0.0, 0.0]];
        let xc = array![[0.0, 0.5], [0.0, -1.0]];
        let logits = array![2.0, 1.0];
        let inputs = LossInputs {
            logits: &logits,
            target: 1,
            edge_logits: &[0.0; 4],
            x: &x,
            spec: &spec(),
            x_discrete: &xd,
            x_continuous: &xc,
            gate_prediction: 1,
            eta_mode: EtaMode::UntilFlipped,
        };
        let loss = get_loss(&inputs, 0.3).unwrap();
        assert_eq!(loss.edge, 2.0);
        assert_eq!(loss.features, 0.0);
        assert_eq!(loss.eta, 0.0);
        assert_eq!(loss.total, (1.0 - 0.3) * 2.0);
        assert_eq!(loss.total, loss.recombine());
    }

    #[test]
    fn class_out_of_range() {
        let x = array![[1.0, 0.5]];
        let logits = array![0.0, 1.0];
        let inputs = LossInputs {
            logits: &logits,
            target: 2,
            edge_logits: &[],
            x: &x,
            spec: &spec(),
            x_discrete: &x,
            x_continuous: &x,
            gate_prediction: 0,
            eta_mode: EtaMode::UntilFlipped,
        };
        assert!(matches!(get_loss(&inputs, 0.5), Err(Error::Class { class: 2, count: 2 })));
    }

    #[test]
    fn gates_zero_the_matching_gradients() {
        let x = array![[1.0, 0.5]];
        let xd = array![[0.7, 0.0]];
        let xc = array![[0.0, 0.9]];
        let logits = array![0.3, -0.2];
        let mut inputs = LossInputs {
            logits: &logits,
            target: 1,
            edge_logits: &[0.4, -1.0],
            x: &x,
            spec: &spec(),
            x_discrete: &xd,
            x_continuous: &xc,
            gate_prediction: 1,
            eta_mode: EtaMode::UntilFlipped,
        };
        // eta = 0: no classification signal
        let g = get_loss_backward(&inputs, 0.5, 1.0).unwrap();
        assert!(g.logits.iter().all(|&v| v == 0.0));
        // alpha = 1: edges only through the classifier, which is gated off here
        let g = get_loss_backward(&inputs, 1.0, 1.0).unwrap();
        assert!(g.edge_logits.iter().all(|&v| v == 0.0));
        inputs.gate_prediction = 0;
        let g = get_loss_backward(&inputs, 0.5, 1.0).unwrap();
        assert!(g.logits.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn schedule_endpoints() {
        let lin = AlphaPolicy::Linear;
        assert_eq!(get_alpha(0, 0.0, 0.0, &lin, 500).unwrap(), 1.0);
        assert_eq!(get_alpha(500, 0.0, 0.0, &lin, 500).unwrap(), 0.0);
        assert_eq!(get_alpha(250, 0.0, 0.0, &AlphaPolicy::Sinusoidal, 500).unwrap(), 0.5);
        assert_eq!(get_alpha(3, 2.0, 1.0, &AlphaPolicy::Dynamic, 500).unwrap(), 0.0);
        assert_eq!(get_alpha(3, 1.0, 1.0, &AlphaPolicy::Dynamic, 500).unwrap(), 1.0);
        assert_eq!(get_alpha(7, 0.0, 0.0, &AlphaPolicy::Feature, 500).unwrap(), 1.0);
        assert!(get_alpha(0, 0.0, 0.0, &lin, 0).is_err());
    }

    #[test]
    fn policy_parsing() {
        assert_eq!(
            AlphaPolicy::parse("exp", None, None, 500).unwrap(),
            AlphaPolicy::Exponential { delta: 100.0 }
        );
        assert_eq!(
            AlphaPolicy::parse("const", None, None, 500).unwrap(),
            AlphaPolicy::Constant { alpha: 0.5 }
        );
        assert!(AlphaPolicy::parse("const", Some(1.5), None, 500).is_err());
        assert!(AlphaPolicy::parse("exp", None, Some(0.0), 500).is_err());
    }
}
