//! Trainable perturbations and the views they induce.
//!
//! Feature entries move through `X_d = clamp(tanh(R_max * tanh(P)) + X)` on
//! discrete columns and `X_c = clamp(P + X)` on continuous ones. Each
//! undirected edge has one logit whose sigmoid is the soft weight of both of
//! its directions; the hard view keeps an edge iff that sigmoid exceeds 0.5.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::{EdgeView, FeatureSpec};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Nearest integer, ties away from zero.
pub fn to_int(x: f64) -> f64 {
    x.round()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationState {
    /// Feature logits, one per node-feature entry.
    pub features: Array2<f64>,
    /// Edge logits, one per (undirected) edge of the instance.
    pub edges: Vec<f64>,
}

impl PerturbationState {
    pub fn new(nodes: usize, feature_dim: usize, edges: usize, edge_init: f64) -> Self {
        Self {
            features: Array2::zeros((nodes, feature_dim)),
            edges: vec![edge_init; edges],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.features.iter().chain(&self.edges).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedViews {
    /// Differentiable feature matrix `X_d + X_c`.
    pub x_soft: Array2<f64>,
    /// Thresholded feature matrix (discrete columns rounded).
    pub x_hard: Array2<f64>,
    /// Discrete component; zero on continuous columns.
    pub x_discrete: Array2<f64>,
    /// Continuous component; zero on discrete columns.
    pub x_continuous: Array2<f64>,
    /// `sigmoid(EP)` per directed slot.
    pub edge_soft: Vec<f64>,
    /// 0/1 per directed slot.
    pub edge_hard: Vec<f64>,
    /// Keep flag per undirected edge.
    pub keep: Vec<bool>,
}

fn check_shapes(state: &PerturbationState, x: &Array2<f64>, spec: &FeatureSpec, edges: &EdgeView) -> Result<()> {
    if state.features.dim() != x.dim() || spec.dim() != x.ncols() {
        return Err(Error::dim(format!(
            "perturbation {:?}, features {:?}, spec width {}",
            state.features.dim(),
            x.dim(),
            spec.dim()
        )));
    }
    if edges.owner.iter().any(|&k| k >= state.edges.len()) || edges.node_count != x.nrows() {
        return Err(Error::dim(format!(
            "{} edge logits do not cover the edge view",
            state.edges.len()
        )));
    }
    Ok(())
}

/// Builds every view of the current state.
pub fn get_pert(
    state: &PerturbationState,
    x: &Array2<f64>,
    spec: &FeatureSpec,
    edges: &EdgeView,
) -> Result<PerturbedViews> {
    check_shapes(state, x, spec, edges)?;
    let (n, f) = x.dim();
    let mut x_discrete = Array2::zeros((n, f));
    let mut x_continuous = Array2::zeros((n, f));
    let mut x_hard = Array2::zeros((n, f));
    for i in 0..n {
        for j in 0..f {
            let (lo, hi) = (spec.lower[j], spec.upper[j]);
            let p = state.features[[i, j]];
            let xv = x[[i, j]];
            if spec.discrete[j] {
                let shift = (spec.upper[j] * p.tanh()).tanh();
                x_discrete[[i, j]] = (shift + xv).clamp(lo, hi);
                x_hard[[i, j]] = to_int(shift + xv).clamp(lo, hi);
            } else {
                let v = (p + xv).clamp(lo, hi);
                x_continuous[[i, j]] = v;
                x_hard[[i, j]] = v;
            }
        }
    }
    let probs: Vec<f64> = state.edges.iter().map(|&e| sigmoid(e)).collect();
    let keep: Vec<bool> = probs.iter().map(|&p| p > 0.5).collect();
    let edge_soft = edges.broadcast(&probs);
    let edge_hard = edges.owner.iter().map(|&k| f64::from(u8::from(keep[k]))).collect();
    Ok(PerturbedViews {
        x_soft: &x_discrete + &x_continuous,
        x_hard,
        x_discrete,
        x_continuous,
        edge_soft,
        edge_hard,
        keep,
    })
}

/// Chain rule from gradients on the soft views back to the logits. Clamps pass
/// gradient where the unclamped value lies inside the bounds (inclusive) and
/// block it outside. Both directions of an edge accumulate into its logit.
pub fn pert_backward(
    state: &PerturbationState,
    x: &Array2<f64>,
    spec: &FeatureSpec,
    edges: &EdgeView,
    grad_x_soft: &Array2<f64>,
    grad_edge_soft: &[f64],
) -> Result<(Array2<f64>, Vec<f64>)> {
    check_shapes(state, x, spec, edges)?;
    if grad_x_soft.dim() != x.dim() || grad_edge_soft.len() != edges.len() {
        return Err(Error::dim("upstream gradients do not match the views"));
    }
    let (n, f) = x.dim();
    let mut grad_p = Array2::zeros((n, f));
    for i in 0..n {
        for j in 0..f {
            let g = grad_x_soft[[i, j]];
            if g == 0.0 {
                continue;
            }
            let (lo, hi) = (spec.lower[j], spec.upper[j]);
            let p = state.features[[i, j]];
            let xv = x[[i, j]];
            grad_p[[i, j]] = if spec.discrete[j] {
                let t = p.tanh();
                let u = (spec.upper[j] * t).tanh();
                let raw = u + xv;
                if raw < lo || raw > hi {
                    0.0
                } else {
                    g * (1.0 - u * u) * spec.upper[j] * (1.0 - t * t)
                }
            } else {
                let raw = p + xv;
                if raw < lo || raw > hi {
                    0.0
                } else {
                    g
                }
            };
        }
    }
    let per_edge = edges.accumulate(grad_edge_soft, state.edges.len());
    let grad_ep = per_edge
        .iter()
        .zip(&state.edges)
        .map(|(&g, &e)| {
            let s = sigmoid(e);
            g * s * (1.0 - s)
        })
        .collect();
    Ok((grad_p, grad_ep))
}
