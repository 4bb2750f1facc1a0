//! Estimator menu and the standardization wrapped around it.

use sbi_core::{Error, Result, RngKey, Tensor};
use sbi_estimators::cnf::Solver;
use sbi_estimators::{Cnf, CnfSpec, Maf, MafSpec, Mdn, MdnSpec, Nre, NreSpec, TrainLoss};
use sbi_ndnet::{Activation, NetParams};
use serde::{Deserialize, Serialize};

fn hidden_64() -> Vec<usize> {
    vec![64, 64]
}

fn hidden_128() -> Vec<usize> {
    vec![128, 128]
}

fn five() -> usize {
    5
}

fn one() -> f64 {
    1.0
}

fn sigma_min() -> f64 {
    1e-3
}

fn ode_steps() -> usize {
    64
}

/// Network choice without the data dimensions, which the engine fills in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EstimatorConfig {
    Maf {
        #[serde(default = "five")]
        n_layers: usize,
        #[serde(default = "hidden_64")]
        hidden_sizes: Vec<usize>,
        #[serde(default)]
        activation: Activation,
    },
    Mdn {
        #[serde(default = "five")]
        n_components: usize,
        #[serde(default = "hidden_64")]
        hidden_sizes: Vec<usize>,
        #[serde(default)]
        activation: Activation,
    },
    Cnf {
        #[serde(default = "hidden_128")]
        hidden_sizes: Vec<usize>,
        #[serde(default)]
        activation: Activation,
        #[serde(default = "sigma_min")]
        sigma_min: f64,
        #[serde(default = "ode_steps")]
        ode_steps: usize,
        #[serde(default)]
        solver: Solver,
    },
    Nre {
        #[serde(default = "hidden_64")]
        hidden_sizes: Vec<usize>,
        #[serde(default)]
        activation: Activation,
        #[serde(default = "five")]
        n_contrast: usize,
        #[serde(default = "one")]
        gamma: f64,
    },
}

impl EstimatorConfig {
    pub fn default_maf() -> Self {
        EstimatorConfig::Maf {
            n_layers: five(),
            hidden_sizes: hidden_64(),
            activation: Activation::Tanh,
        }
    }

    pub fn default_cnf() -> Self {
        EstimatorConfig::Cnf {
            hidden_sizes: hidden_128(),
            activation: Activation::Tanh,
            sigma_min: sigma_min(),
            ode_steps: ode_steps(),
            solver: Solver::Heun,
        }
    }

    pub fn default_nre() -> Self {
        EstimatorConfig::Nre {
            hidden_sizes: hidden_64(),
            activation: Activation::Tanh,
            n_contrast: five(),
            gamma: one(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorConfig::Maf { .. } => "maf",
            EstimatorConfig::Mdn { .. } => "mdn",
            EstimatorConfig::Cnf { .. } => "cnf",
            EstimatorConfig::Nre { .. } => "nre",
        }
    }
}

/// A built estimator. Density estimators model `event | context`.
#[derive(Clone, Debug)]
pub enum Surrogate {
    Maf(Maf),
    Mdn(Mdn),
    Cnf(Cnf),
    Nre(Nre),
}

impl Surrogate {
    pub fn build(cfg: &EstimatorConfig, event_dim: usize, context_dim: usize) -> Result<Self> {
        Ok(match cfg.clone() {
            EstimatorConfig::Maf {
                n_layers,
                hidden_sizes,
                activation,
            } => {
                let mut s = MafSpec::new(event_dim, context_dim, n_layers, &hidden_sizes);
                s.activation = activation;
                Surrogate::Maf(Maf::new(s)?)
            }
            EstimatorConfig::Mdn {
                n_components,
                hidden_sizes,
                activation,
            } => {
                let mut s = MdnSpec::new(event_dim, context_dim, n_components, &hidden_sizes);
                s.activation = activation;
                Surrogate::Mdn(Mdn::new(s)?)
            }
            EstimatorConfig::Cnf {
                hidden_sizes,
                activation,
                sigma_min,
                ode_steps,
                solver,
            } => {
                let mut s = CnfSpec::new(event_dim, context_dim, &hidden_sizes);
                s.activation = activation;
                s.sigma_min = sigma_min;
                s.ode_steps = ode_steps;
                s.solver = solver;
                Surrogate::Cnf(Cnf::new(s)?)
            }
            // Ratio estimators take θ as the event and y as the context.
            EstimatorConfig::Nre {
                hidden_sizes,
                activation,
                n_contrast,
                gamma,
            } => {
                let mut s = NreSpec::new(event_dim, context_dim, &hidden_sizes);
                s.activation = activation;
                s.n_contrast = n_contrast;
                s.gamma = gamma;
                Surrogate::Nre(Nre::new(s)?)
            }
        })
    }

    pub fn init(&self, key: RngKey) -> Result<NetParams> {
        match self {
            Surrogate::Maf(m) => m.init(key),
            Surrogate::Mdn(m) => m.init(key),
            Surrogate::Cnf(m) => m.init(key),
            Surrogate::Nre(m) => m.init(key),
        }
    }

    pub fn train_loss(&self) -> &dyn TrainLoss {
        match self {
            Surrogate::Maf(m) => m,
            Surrogate::Mdn(m) => m,
            Surrogate::Cnf(m) => m,
            Surrogate::Nre(m) => m,
        }
    }

    /// `log q(event | context)`, or `log h(y, θ)` for ratio estimators
    /// with `event = θ`, `context = y`.
    pub fn log_prob(&self, params: &NetParams, event: &Tensor, context: &Tensor) -> Result<Vec<f64>> {
        match self {
            Surrogate::Maf(m) => m.log_prob(params, event, context),
            Surrogate::Mdn(m) => m.log_prob(params, event, context),
            Surrogate::Cnf(m) => m.log_prob(params, event, context),
            Surrogate::Nre(m) => m.log_h(params, context, event),
        }
    }

    pub fn sample(&self, params: &NetParams, key: RngKey, context: &Tensor, n: usize) -> Result<Tensor> {
        match self {
            Surrogate::Maf(m) => m.sample(params, key, context, n),
            Surrogate::Mdn(m) => m.sample(params, key, context, n),
            Surrogate::Cnf(m) => m.sample(params, key, context, n),
            Surrogate::Nre(_) => Err(Error::Contract("ratio estimators cannot be sampled directly".into())),
        }
    }
}

/// Per-column affine scaling stored as `NetParams` buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaling {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaling {
    pub fn fit(x: &Tensor) -> Self {
        Scaling {
            mean: x.column_means(),
            std: x
                .column_stds()
                .into_iter()
                .map(|s| if s.is_finite() && s > 1e-12 { s } else { 1.0 })
                .collect(),
        }
    }

    pub fn load(params: &NetParams, name: &str) -> Result<Self> {
        Ok(Scaling {
            mean: params.buffer(&format!("scale/{name}_mean"))?.data().to_vec(),
            std: params.buffer(&format!("scale/{name}_std"))?.data().to_vec(),
        })
    }

    pub fn store(&self, params: &mut NetParams, name: &str) {
        params.insert_buffer(format!("scale/{name}_mean"), Tensor::row_vector(&self.mean));
        params.insert_buffer(format!("scale/{name}_std"), Tensor::row_vector(&self.std));
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        out
    }

    pub fn invert(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = *v * self.std[j] + self.mean[j];
            }
        }
        out
    }

    /// `Σ log σ_j`, the log-density change from standardizing.
    pub fn log_det(&self) -> f64 {
        self.std.iter().map(|s| s.ln()).sum()
    }
}
