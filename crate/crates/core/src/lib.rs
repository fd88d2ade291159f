//! Numerical toolkit for neural collapse in shallow ReLU networks.
//!
//! The crate covers closed-form minimizers of the unconstrained positive
//! feature model, linear feasibility tests for collapse on a given dataset,
//! random ReLU feature ranks, collapse metrics for trained networks,
//! two-neuron generalization bounds and Monte Carlo probes of the supporting
//! concentration inequalities.

pub mod data;
pub mod error;
pub mod feasibility;
pub mod generalization;
pub mod io;
pub mod linalg;
pub mod lp;
pub mod networks;
pub mod probes;
pub mod random_features;
pub mod rng;
pub mod stats;
pub mod upfm;

pub use data::{centering_matrix, class_means, label_matrix, sample_gmm, GmmSpec, LabeledDataset};
pub use error::{NcError, Result};
pub use rng::RngStream;
