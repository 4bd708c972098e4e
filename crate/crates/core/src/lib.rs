//! Conformal prediction for node classification and regression on graphs.
//!
//! The pipeline trains a GCN on a transductive split, calibrates split
//! conformal prediction sets (APS) or intervals (CQR) on held-out nodes,
//! characterizes the exact distribution of test-time coverage, and trains a
//! topology-aware correction GCN that shrinks sets and intervals without
//! touching validity.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix `f64`.

pub mod autodiff;
pub mod bundle;
pub mod conformal;
pub mod correction;
pub mod coverage;
pub mod error;
pub mod eval;
pub mod gnn;
pub mod graph;
pub mod rng;
pub mod scalar;
pub mod scores;
pub mod sparse;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use graph::{DataSplit, Graph, Labels, NodeData, SplitConfig, Task};
pub use scalar::Scalar;

pub type Tensor = autodiff::Tensor<f64>;
pub type Tape = autodiff::Tape<f64>;
pub type AdamState = autodiff::AdamState<f64>;
pub type CsrMatrix = sparse::CsrMatrix<f64>;
pub type GcnModel = gnn::GcnModel<f64>;
pub type CorrectionModel = correction::CorrectionModel<f64>;
pub type Threshold = scores::Threshold<f64>;
