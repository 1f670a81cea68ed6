//! Collective learning for graph neural networks.
//!
//! The crate trains small message-passing models (GCN, GraphSAGE-mean) on
//! partially labeled graphs and wraps them in a collective scheme that feeds
//! Monte Carlo samples of predicted labels back into the model input. A 1-WL
//! oracle and certified counterexample graphs make the expressiveness claims
//! testable.

pub mod collective;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod linalg;
pub mod wl;

pub use error::{Error, Result};
pub use gnn::{ModelConfig, ModelKind, ModelState, TrainConfig};
pub use graph::{Graph, SplitSpec};
pub use linalg::{Matrix, Mode};

/// The RNG used throughout the binaries and tests.
pub type Rng = rand_chacha::ChaCha8Rng;
