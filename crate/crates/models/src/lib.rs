//! Benchmark generative models with priors, simulators and, where
//! available, closed-form likelihoods.

pub mod gaussian;
pub mod mixture;
pub mod slcp;
pub mod solar;

use std::fmt;

use sbi_core::{Error, LogLikelihoodFn, PriorSpec, Result, RngKey, SimulatorFn, Tensor, ThetaBatch};

pub use gaussian::gaussian_model;
pub use mixture::mixture_model;
pub use slcp::slcp_model;
pub use solar::{solar_dynamo_model, SolarDynamoConfig};

#[derive(Clone)]
pub struct BenchmarkModel {
    pub name: String,
    pub prior: PriorSpec,
    pub simulator: SimulatorFn,
    pub y_dim: usize,
    pub observation: Option<Vec<f64>>,
    pub log_likelihood: Option<LogLikelihoodFn>,
}

impl fmt::Debug for BenchmarkModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BenchmarkModel")
            .field("name", &self.name)
            .field("prior", &self.prior)
            .field("y_dim", &self.y_dim)
            .field("observation", &self.observation)
            .field("tractable", &self.log_likelihood.is_some())
            .finish()
    }
}

impl BenchmarkModel {
    pub fn simulate(&self, key: RngKey, theta: &ThetaBatch) -> Result<Tensor> {
        let y = (self.simulator)(key, theta)?;
        if y.rows() != theta.n() || y.cols() != self.y_dim {
            return Err(Error::Contract(format!(
                "{} simulator returned {:?} for {} parameter rows",
                self.name,
                y.shape(),
                theta.n()
            )));
        }
        Ok(y)
    }

    /// Unnormalized log posterior `log π(y|θ) + log π(θ)` for a flattened
    /// parameter vector; `None` when the likelihood is intractable.
    pub fn log_posterior(&self, theta: &[f64], y: &[f64]) -> Option<f64> {
        let ll = self.log_likelihood.as_ref()?;
        let lp = self.prior.log_prob_flat(theta);
        if lp == f64::NEG_INFINITY {
            return Some(lp);
        }
        Some(ll(theta, y) + lp)
    }
}

pub const MODEL_NAMES: [&str; 4] = ["gaussian", "slcp", "mixture", "solar_dynamo"];

/// Look a model up by its CLI name.
pub fn by_name(name: &str) -> Result<BenchmarkModel> {
    match name {
        "gaussian" => Ok(gaussian_model()),
        "slcp" => Ok(slcp_model()),
        "mixture" => Ok(mixture_model()),
        "solar_dynamo" => Ok(solar_dynamo_model(&SolarDynamoConfig::default())),
        _ => Err(Error::Config(format!(
            "unknown model '{name}'; expected one of {}",
            MODEL_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_resolves_every_name() {
        for name in MODEL_NAMES {
            let m = by_name(name).unwrap();
            assert_eq!(m.name, name);
            let theta = m.prior.sample(RngKey::new(0), 3).unwrap();
            assert_eq!(m.simulate(RngKey::new(1), &theta).unwrap().shape(), &[3, m.y_dim]);
        }
        assert!(matches!(by_name("two_moons"), Err(Error::Config(_))));
    }
}
