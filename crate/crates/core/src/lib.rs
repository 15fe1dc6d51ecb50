//! Cross-domain short-text classification with a global token-graph GCN,
//! per-instance window-graph GAT and a BiLSTM classifier.

pub mod autodiff;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod global_graph;
pub mod heatmap;
pub mod instance_graph;
pub mod io;
pub mod metrics;
pub mod model;
pub mod train;

pub use error::{GlenError, Result};
