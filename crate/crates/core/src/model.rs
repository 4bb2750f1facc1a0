//! Function types shared by models and inference engines.

use std::sync::Arc;

use crate::{Result, RngKey, Tensor, ThetaBatch};

/// Draws one `y` row per `θ` row. Must be deterministic given the key.
pub type SimulatorFn = Arc<dyn Fn(RngKey, &ThetaBatch) -> Result<Tensor> + Send + Sync>;

/// `log π(y | θ)` for a flattened parameter vector and one observation.
pub type LogLikelihoodFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
