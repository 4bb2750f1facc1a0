//! Approximate Bayesian computation: kernel rejection sampling, the
//! sequential Monte Carlo sampler with importance weights and geometric
//! ε decay, and summary statistics.

pub mod kernels;
pub mod rejection;
pub mod smc;
pub mod summaries;

use sbi_core::{Error, PriorSpec, Result, RngKey, SimulatorFn, Tensor, ThetaBatch};

pub use kernels::{kernel_eval, KernelKind, KernelSpec};
pub use rejection::{rejection_abc, RejectionConfig};
pub use smc::{ess_of_weights, smc_abc, systematic_resample, ParticleSet, RoundStats, SmcConfig, SmcTrace, Transition};
pub use summaries::{
    euclidean, euclidean_distance, identity, identity_summary, regression_summary_train, train_regression, DistanceFn,
    RegressionSummary, RegressionSummaryConfig, SummaryFn,
};

/// Everything an ABC sampler needs to score a parameter draw.
#[derive(Clone)]
pub struct AbcProblem {
    pub prior: PriorSpec,
    pub simulator: SimulatorFn,
    pub summary: SummaryFn,
    pub distance: DistanceFn,
    pub y_obs: Vec<f64>,
}

impl std::fmt::Debug for AbcProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AbcProblem")
            .field("prior", &self.prior)
            .field("y_obs", &self.y_obs)
            .finish_non_exhaustive()
    }
}

impl AbcProblem {
    /// Raw-data ABC: identity summary and Euclidean distance.
    pub fn new(prior: PriorSpec, simulator: SimulatorFn, y_obs: Vec<f64>) -> Self {
        AbcProblem {
            prior,
            simulator,
            summary: identity(),
            distance: euclidean(),
            y_obs,
        }
    }

    pub fn with_summary(mut self, summary: SummaryFn) -> Self {
        self.summary = summary;
        self
    }

    pub fn with_distance(mut self, distance: DistanceFn) -> Self {
        self.distance = distance;
        self
    }

    pub fn observed_summary(&self) -> Result<Vec<f64>> {
        let s = (self.summary)(&Tensor::row_vector(&self.y_obs))?;
        if s.rows() != 1 {
            return Err(Error::Contract(format!("summary of one observation has {} rows", s.rows())));
        }
        Ok(s.into_data())
    }

    /// Simulate at `theta` and return the summary distance of every row to
    /// `s_obs`. Non-finite distances become `+∞` so they are never accepted.
    pub fn distances(&self, key: RngKey, theta: &ThetaBatch, s_obs: &[f64]) -> Result<Vec<f64>> {
        let y = (self.simulator)(key, theta)?;
        if y.rows() != theta.n() {
            return Err(Error::Contract(format!(
                "simulator returned {} rows for {} parameters",
                y.rows(),
                theta.n()
            )));
        }
        let s = (self.summary)(&y)?;
        let d = (self.distance)(&s, s_obs);
        Ok(d.into_iter().map(|v| if v.is_nan() { f64::INFINITY } else { v }).collect())
    }
}
