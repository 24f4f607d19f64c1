//! Sample-complexity experiments for structured linear-output networks.
//!
//! Convolutional (average- and weighted-pooling) and linear recurrent models
//! are all linear in the input once their weights are collapsed into an
//! expanded regressor. This crate generates seeded Gaussian data for them,
//! fits them by least squares, evaluates prediction error, and computes
//! upper-bound rates and packing-based lower bounds.

pub mod data;
pub mod error;
pub mod estimate;
pub mod exec;
pub mod linalg;
pub mod lower;
pub mod model;
pub mod recheck;
pub mod rng;
pub mod sweep;
pub mod theory;

pub use error::{Error, Result};
pub use exec::ExecMode;
pub use linalg::Matrix;
pub use model::{ExpandedParam, ModelKind, ModelSpec, Params};
