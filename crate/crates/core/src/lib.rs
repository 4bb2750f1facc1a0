//! Shared foundations for the simulation-based inference workspace.
//!
//! Every stochastic routine in the workspace takes an explicit [`RngKey`];
//! nothing reads global randomness. Parameter samples travel as named
//! [`ThetaBatch`] matrices and simulated corpora as [`Dataset`] records.

pub mod data;
pub mod distributions;
mod error;
pub mod model;
pub mod prior;
pub mod rng;
pub mod stats;
pub mod tensor;

pub use data::{split_train_val, stack_data, Dataset};
pub use distributions::{Distribution, Support};
pub use error::{Error, Result};
pub use model::{LogLikelihoodFn, SimulatorFn};
pub use prior::{PriorSpec, ThetaBatch};
pub use rng::{fold_in, RngKey};
pub use tensor::Tensor;
