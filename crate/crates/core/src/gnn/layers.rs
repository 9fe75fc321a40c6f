//! The three convolution operators. Each returns the linear response; the
//! oracle applies the nonlinearity.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::propagate::{Normalization, Propagation};
use crate::error::{Error, Result};
use crate::graph::EdgeView;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Gcn,
    /// Chebyshev filter with `k` terms `T_0 .. T_{k-1}`.
    Cheb { k: usize },
    GraphConv,
}

impl LayerKind {
    /// Number of weight matrices the layer carries.
    pub fn matrix_count(self) -> usize {
        match self {
            LayerKind::Gcn => 1,
            LayerKind::Cheb { k } => k,
            LayerKind::GraphConv => 2,
        }
    }

    /// How far (in hops) one application moves information.
    pub fn hops(self) -> usize {
        match self {
            LayerKind::Gcn | LayerKind::GraphConv => 1,
            LayerKind::Cheb { k } => k.saturating_sub(1),
        }
    }

    pub fn name(self) -> String {
        match self {
            LayerKind::Gcn => "gcn".into(),
            LayerKind::Cheb { k } => format!("cheb{k}"),
            LayerKind::GraphConv => "graphconv".into(),
        }
    }
}

impl std::str::FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(LayerKind::Gcn),
            "graphconv" => Ok(LayerKind::GraphConv),
            "cheb" => Ok(LayerKind::Cheb { k: 1 }),
            other => match other.strip_prefix("cheb").map(str::parse::<usize>) {
                Some(Ok(k)) if k >= 1 => Ok(LayerKind::Cheb { k }),
                _ => Err(Error::Config(format!("unknown layer kind `{other}`"))),
            },
        }
    }
}

/// Weights of one convolution. For GraphConv `weights[0]` acts on the
/// aggregated neighbourhood and `weights[1]` on the node itself; for Cheb
/// `weights[k]` multiplies `T_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub kind: LayerKind,
    pub weights: Vec<Array2<f64>>,
    pub bias: Option<Array1<f64>>,
}

impl LayerParams {
    pub fn new(kind: LayerKind, weights: Vec<Array2<f64>>, bias: Option<Array1<f64>>) -> Result<Self> {
        if let LayerKind::Cheb { k: 0 } = kind {
            return Err(Error::Config("Chebyshev order must be at least 1".into()));
        }
        if weights.len() != kind.matrix_count() {
            return Err(Error::dim(format!(
                "{} weight matrices for a {} layer",
                weights.len(),
                kind.name()
            )));
        }
        let shape = weights[0].dim();
        if weights.iter().any(|w| w.dim() != shape) {
            return Err(Error::dim("weight matrices within a layer differ in shape"));
        }
        if bias.as_ref().is_some_and(|b| b.len() != shape.1) {
            return Err(Error::dim("bias length differs from output width"));
        }
        Ok(Self {
            kind,
            weights,
            bias,
        })
    }

    /// Glorot-uniform weights and zero bias.
    pub fn glorot<R: Rng>(rng: &mut R, kind: LayerKind, d_in: usize, d_out: usize) -> Self {
        let limit = (6.0 / (d_in + d_out).max(1) as f64).sqrt();
        let weights = (0..kind.matrix_count())
            .map(|_| Array2::from_shape_fn((d_in, d_out), |_| rng.gen_range(-limit..=limit)))
            .collect();
        Self {
            kind,
            weights,
            bias: Some(Array1::zeros(d_out)),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn d_out(&self) -> usize {
        self.weights[0].ncols()
    }
}

/// What one layer application keeps for its reverse pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub input: Array2<f64>,
    pub propagation: Option<Propagation>,
    /// GCN/GraphConv: the aggregated input. Cheb: `T_0 X .. T_{K-1} X`.
    pub aggregated: Vec<Array2<f64>>,
    /// Linear response before any activation.
    pub output: Array2<f64>,
}

/// Gradients of one layer's reverse pass.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Vec<Array2<f64>>,
    pub bias: Option<Array1<f64>>,
}

fn check_inputs(x: ArrayView2<'_, f64>, edges: &EdgeView, weights: &[f64], params: &LayerParams) -> Result<()> {
    if x.nrows() != edges.node_count {
        return Err(Error::dim(format!(
            "{} feature rows for {} nodes",
            x.nrows(),
            edges.node_count
        )));
    }
    if x.ncols() != params.d_in() {
        return Err(Error::dim(format!(
            "input width {} for a layer expecting {}",
            x.ncols(),
            params.d_in()
        )));
    }
    if weights.len() != edges.len() {
        return Err(Error::dim(format!(
            "{} edge weights for {} edge slots",
            weights.len(),
            edges.len()
        )));
    }
    if !x.iter().chain(weights).all(|v| v.is_finite()) {
        return Err(Error::Numeric {
            epoch: None,
            message: "layer input contains NaN or infinity".into(),
        });
    }
    Ok(())
}

fn add_bias(mut out: Array2<f64>, bias: &Option<Array1<f64>>) -> Array2<f64> {
    if let Some(b) = bias {
        out += b;
    }
    out
}

/// `D^-1/2 (A_w + I) D^-1/2 X W + b`
pub fn gcn_forward(
    x: ArrayView2<'_, f64>,
    edges: &EdgeView,
    weights: &[f64],
    params: &LayerParams,
) -> Result<(Array2<f64>, LayerTrace)> {
    check_inputs(x, edges, weights, params)?;
    let prop = Propagation::new(Normalization::Symmetric, edges, weights);
    let z = prop.apply(edges, weights, x);
    let out = add_bias(z.dot(&params.weights[0]), &params.bias);
    Ok((
        out.clone(),
        LayerTrace {
            input: x.to_owned(),
            propagation: Some(prop),
            aggregated: vec![z],
            output: out,
        },
    ))
}

/// `sum_k T_k(L~) X Theta_k + b` with `L~ = 2 L / lambda_max - I`,
/// `L = I - D^-1/2 (A_w + I) D^-1/2` and `lambda_max = 2`, so `L~` is the
/// negated symmetric propagation.
pub fn cheb_forward(
    x: ArrayView2<'_, f64>,
    edges: &EdgeView,
    weights: &[f64],
    params: &LayerParams,
) -> Result<(Array2<f64>, LayerTrace)> {
    check_inputs(x, edges, weights, params)?;
    let LayerKind::Cheb { k } = params.kind else {
        return Err(Error::Config("cheb_forward needs a Chebyshev layer".into()));
    };
    let (prop, terms) = if k > 1 {
        let prop = Propagation::new(Normalization::Symmetric, edges, weights);
        let mut terms = vec![x.to_owned()];
        terms.push(-prop.apply(edges, weights, x));
        for i in 2..k {
            let next = prop.apply(edges, weights, terms[i - 1].view()) * -2.0 - &terms[i - 2];
            terms.push(next);
        }
        (Some(prop), terms)
    } else {
        (None, vec![x.to_owned()])
    };
    let mut out = terms[0].dot(&params.weights[0]);
    for (t, w) in terms.iter().zip(&params.weights).skip(1) {
        out += &t.dot(w);
    }
    let out = add_bias(out, &params.bias);
    Ok((
        out.clone(),
        LayerTrace {
            input: x.to_owned(),
            propagation: prop,
            aggregated: terms,
            output: out,
        },
    ))
}

/// `D^-1 (A_w + I) X W_nbr + X W_self + b`
pub fn graphconv_forward(
    x: ArrayView2<'_, f64>,
    edges: &EdgeView,
    weights: &[f64],
    params: &LayerParams,
) -> Result<(Array2<f64>, LayerTrace)> {
    check_inputs(x, edges, weights, params)?;
    let prop = Propagation::new(Normalization::Row, edges, weights);
    let z = prop.apply(edges, weights, x);
    let out = add_bias(z.dot(&params.weights[0]) + x.dot(&params.weights[1]), &params.bias);
    Ok((
        out.clone(),
        LayerTrace {
            input: x.to_owned(),
            propagation: Some(prop),
            aggregated: vec![z],
            output: out,
        },
    ))
}

pub fn layer_forward(
    x: ArrayView2<'_, f64>,
    edges: &EdgeView,
    weights: &[f64],
    params: &LayerParams,
) -> Result<(Array2<f64>, LayerTrace)> {
    match params.kind {
        LayerKind::Gcn => gcn_forward(x, edges, weights, params),
        LayerKind::Cheb { .. } => cheb_forward(x, edges, weights, params),
        LayerKind::GraphConv => graphconv_forward(x, edges, weights, params),
    }
}

/// Reverse pass of the linear response. Returns the input gradient, adds
/// edge-weight gradients into `grad_weights`, and computes parameter
/// gradients when asked.
pub fn layer_backward(
    params: &LayerParams,
    trace: &LayerTrace,
    edges: &EdgeView,
    weights: &[f64],
    grad_out: ArrayView2<'_, f64>,
    grad_weights: &mut [f64],
    want_params: bool,
) -> (Array2<f64>, Option<LayerGrads>) {
    let bias_grad = || params.bias.as_ref().map(|_| grad_out.sum_axis(Axis(0)));
    match params.kind {
        LayerKind::Gcn => {
            let prop = trace.propagation.as_ref().expect("gcn trace has degrees");
            let z = &trace.aggregated[0];
            let grad_z = grad_out.dot(&params.weights[0].t());
            let grad_x = prop.backward(edges, weights, trace.input.view(), None, grad_z.view(), grad_weights);
            let grads = want_params.then(|| LayerGrads {
                weights: vec![z.t().dot(&grad_out)],
                bias: bias_grad(),
            });
            (grad_x, grads)
        }
        LayerKind::GraphConv => {
            let prop = trace.propagation.as_ref().expect("graphconv trace has degrees");
            let z = &trace.aggregated[0];
            let grad_z = grad_out.dot(&params.weights[0].t());
            let mut grad_x = prop.backward(
                edges,
                weights,
                trace.input.view(),
                Some(z.view()),
                grad_z.view(),
                grad_weights,
            );
            grad_x += &grad_out.dot(&params.weights[1].t());
            let grads = want_params.then(|| LayerGrads {
                weights: vec![z.t().dot(&grad_out), trace.input.t().dot(&grad_out)],
                bias: bias_grad(),
            });
            (grad_x, grads)
        }
        LayerKind::Cheb { k } => {
            let terms = &trace.aggregated;
            let mut grad_terms: Vec<Array2<f64>> =
                params.weights.iter().map(|w| grad_out.dot(&w.t())).collect();
            if let Some(prop) = trace.propagation.as_ref() {
                // T_i = -2 P T_{i-1} - T_{i-2}; T_1 = -P T_0.
                for i in (2..k).rev() {
                    let upstream = &grad_terms[i] * -2.0;
                    let back = prop.backward(edges, weights, terms[i - 1].view(), None, upstream.view(), grad_weights);
                    grad_terms[i - 1] += &back;
                    let gi = grad_terms[i].clone();
                    grad_terms[i - 2] -= &gi;
                }
                let upstream = -&grad_terms[1];
                let back = prop.backward(edges, weights, terms[0].view(), None, upstream.view(), grad_weights);
                grad_terms[0] += &back;
            }
            let grads = want_params.then(|| LayerGrads {
                weights: terms.iter().map(|t| t.t().dot(&grad_out)).collect(),
                bias: bias_grad(),
            });
            (grad_terms.swap_remove(0), grads)
        }
    }
}
