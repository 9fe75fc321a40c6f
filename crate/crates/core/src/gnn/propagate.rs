//! Weighted neighbourhood aggregation with an implicit unit self-loop, and its
//! exact reverse pass with respect to both the input rows and the edge weights.

use ndarray::{Array2, ArrayView2, Zip};

use crate::graph::EdgeView;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// `D^-1/2 (A_w + I) D^-1/2`
    Symmetric,
    /// `D^-1 (A_w + I)` (mean over the weighted in-neighbourhood)
    Row,
}

/// Degrees of one forward application; `degree[i] = 1 + sum of weights into i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub normalization: Normalization,
    pub degree: Vec<f64>,
}

impl Propagation {
    pub fn new(normalization: Normalization, edges: &EdgeView, weights: &[f64]) -> Self {
        let mut degree = vec![1.0; edges.node_count];
        for (&t, &w) in edges.dst.iter().zip(weights) {
            degree[t] += w;
        }
        Self {
            normalization,
            degree,
        }
    }

    fn coefficient(&self, s: usize, t: usize, w: f64) -> f64 {
        match self.normalization {
            Normalization::Symmetric => w / (self.degree[s] * self.degree[t]).sqrt(),
            Normalization::Row => w / self.degree[t],
        }
    }

    pub fn apply(&self, edges: &EdgeView, weights: &[f64], x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = x.to_owned();
        for (i, mut row) in y.rows_mut().into_iter().enumerate() {
            row /= self.degree[i];
        }
        for ((&s, &t), &w) in edges.src.iter().zip(&edges.dst).zip(weights) {
            let c = self.coefficient(s, t, w);
            if c == 0.0 {
                continue;
            }
            let (src_row, mut dst_row) = (x.row(s), y.row_mut(t));
            Zip::from(&mut dst_row).and(&src_row).for_each(|d, &v| *d += c * v);
        }
        y
    }

    /// Reverse pass of `y = apply(x)`. `y` is only read for row normalization.
    /// Returns the input gradient and accumulates edge-weight gradients into
    /// `grad_weights`.
    pub fn backward(
        &self,
        edges: &EdgeView,
        weights: &[f64],
        x: ArrayView2<'_, f64>,
        y: Option<ArrayView2<'_, f64>>,
        grad_y: ArrayView2<'_, f64>,
        grad_weights: &mut [f64],
    ) -> Array2<f64> {
        let n = edges.node_count;
        let mut grad_x = grad_y.to_owned();
        for (i, mut row) in grad_x.rows_mut().into_iter().enumerate() {
            row /= self.degree[i];
        }
        // dL/d(degree[i]) collected from every term that divides by it.
        let mut grad_degree = vec![0.0; n];
        match self.normalization {
            Normalization::Symmetric => {
                for i in 0..n {
                    let d = self.degree[i];
                    grad_degree[i] -= grad_y.row(i).dot(&x.row(i)) / (d * d);
                }
            }
            Normalization::Row => {
                let y = y.expect("row-normalized backward needs the forward output");
                for i in 0..n {
                    grad_degree[i] -= grad_y.row(i).dot(&y.row(i)) / self.degree[i];
                }
            }
        }
        let mut direct = vec![0.0; weights.len()];
        for (e, ((&s, &t), &w)) in edges.src.iter().zip(&edges.dst).zip(weights).enumerate() {
            let dot = grad_y.row(t).dot(&x.row(s));
            match self.normalization {
                Normalization::Symmetric => {
                    let scale = 1.0 / (self.degree[s] * self.degree[t]).sqrt();
                    let c = w * scale;
                    direct[e] = dot * scale;
                    grad_degree[s] -= 0.5 * c * dot / self.degree[s];
                    grad_degree[t] -= 0.5 * c * dot / self.degree[t];
                }
                Normalization::Row => {
                    direct[e] = dot / self.degree[t];
                }
            }
            let c = self.coefficient(s, t, w);
            if c != 0.0 {
                let (g_row, mut gx_row) = (grad_y.row(t), grad_x.row_mut(s));
                Zip::from(&mut gx_row).and(&g_row).for_each(|d, &g| *d += c * g);
            }
        }
        for (e, &t) in edges.dst.iter().enumerate() {
            grad_weights[e] += direct[e] + grad_degree[t];
        }
        grad_x
    }
}
