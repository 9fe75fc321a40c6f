//! Counterfactual explanations for graph neural networks that perturb node
//! features and edges jointly.

pub mod error;
pub mod explain;
pub mod gnn;
pub mod graph;
pub mod harness;
pub mod loss;
pub mod metrics;
pub mod perturb;

pub use error::{Error, Result};
