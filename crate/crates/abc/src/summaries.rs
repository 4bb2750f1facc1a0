//! Summary statistics and distances.
//!
//! The learned summary is a plain least-squares regression of θ on y: the
//! network's posterior-mean estimate is used as the summary. It is not a
//! neural sufficient-statistic (NASS) objective.

use std::sync::Arc;

use sbi_core::{Dataset, Error, PriorSpec, Result, RngKey, SimulatorFn, Tensor, ThetaBatch};
use sbi_ndnet::{fit_loop, value, value_and_grad, FitConfig, LossProfile, MlpSpec, NetParams, Objective};
use serde::{Deserialize, Serialize};

/// Maps a batch of data rows to a batch of summary rows.
pub type SummaryFn = Arc<dyn Fn(&Tensor) -> Result<Tensor> + Send + Sync>;
/// Distances of every summary row to the observed summary.
pub type DistanceFn = Arc<dyn Fn(&Tensor, &[f64]) -> Vec<f64> + Send + Sync>;

pub fn identity_summary(y: &Tensor) -> Tensor {
    y.clone()
}

pub fn euclidean_distance(s_sim: &Tensor, s_obs: &[f64]) -> Vec<f64> {
    (0..s_sim.rows())
        .map(|i| {
            s_sim
                .row(i)
                .iter()
                .zip(s_obs)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

pub fn identity() -> SummaryFn {
    Arc::new(|y| Ok(identity_summary(y)))
}

pub fn euclidean() -> DistanceFn {
    Arc::new(euclidean_distance)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionSummaryConfig {
    pub n_sims: usize,
    /// Number of leading flattened θ coordinates the network predicts.
    pub embed_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub fit: FitConfig,
}

impl Default for RegressionSummaryConfig {
    fn default() -> Self {
        RegressionSummaryConfig {
            n_sims: 10_000,
            embed_dim: 1,
            hidden_sizes: vec![64, 64],
            fit: FitConfig::default(),
        }
    }
}

const PREFIX: &str = "summary";

/// A trained y ↦ E[θ | y] regressor with its input and output scalings.
#[derive(Clone, Debug)]
pub struct RegressionSummary {
    pub spec: MlpSpec,
    pub params: NetParams,
}

impl RegressionSummary {
    pub fn output_dim(&self) -> usize {
        self.spec.out_dim
    }

    pub fn apply(&self, y: &Tensor) -> Result<Tensor> {
        if y.cols() != self.spec.in_dim {
            return Err(Error::Contract(format!(
                "summary expects {} data columns, got {}",
                self.spec.in_dim,
                y.cols()
            )));
        }
        let x = standardize(y, self.params.buffer("y_mean")?, self.params.buffer("y_std")?);
        let mut out = self.spec.forward_plain(&self.params, PREFIX, &x, None)?;
        let (m, s) = (self.params.buffer("t_mean")?, self.params.buffer("t_std")?);
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = *v * s.data()[j] + m.data()[j];
            }
        }
        Ok(out)
    }

    pub fn into_fn(self) -> SummaryFn {
        Arc::new(move |y| self.apply(y))
    }
}

fn standardize(x: &Tensor, mean: &Tensor, std: &Tensor) -> Tensor {
    let mut out = x.clone();
    for i in 0..out.rows() {
        for (j, v) in out.row_mut(i).iter_mut().enumerate() {
            *v = (*v - mean.data()[j]) / std.data()[j];
        }
    }
    out
}

fn scale_buffers(x: &Tensor) -> (Tensor, Tensor) {
    let mean = x.column_means();
    let std: Vec<f64> = x.column_stds().into_iter().map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
    (Tensor::row_vector(&mean), Tensor::row_vector(&std))
}

struct MseRegression<'a>(&'a MlpSpec);

impl MseRegression<'_> {
    fn target(batch: &Dataset) -> Tensor {
        batch.theta.flatten()
    }
}

impl Objective for MseRegression<'_> {
    fn loss_and_grad(&self, params: &NetParams, batch: &Dataset, _key: RngKey) -> Result<(f64, NetParams)> {
        let target = Self::target(batch);
        value_and_grad(params, |g, pv| {
            let out = self.0.forward(pv, PREFIX, g.constant(batch.y.clone()), None)?;
            Ok((out - g.constant(target.clone())).square().mean())
        })
    }

    fn loss(&self, params: &NetParams, batch: &Dataset, _key: RngKey) -> Result<f64> {
        let target = Self::target(batch);
        value(params, |g, pv| {
            let out = self.0.forward(pv, PREFIX, g.constant(batch.y.clone()), None)?;
            Ok((out - g.constant(target.clone())).square().mean())
        })
    }
}

/// Simulate `n_sims` pairs from the prior and fit an MLP predicting the
/// first `embed_dim` flattened θ coordinates from y.
pub fn regression_summary_train(
    prior: &PriorSpec,
    simulator: &SimulatorFn,
    key: RngKey,
    cfg: &RegressionSummaryConfig,
) -> Result<(NetParams, SummaryFn)> {
    let (summary, _) = train_regression(prior, simulator, key, cfg)?;
    Ok((summary.params.clone(), summary.into_fn()))
}

/// As [`regression_summary_train`] but returns the typed regressor.
pub fn train_regression(
    prior: &PriorSpec,
    simulator: &SimulatorFn,
    key: RngKey,
    cfg: &RegressionSummaryConfig,
) -> Result<(RegressionSummary, LossProfile)> {
    if cfg.embed_dim == 0 || cfg.embed_dim > prior.total_dim() {
        return Err(Error::Config(format!(
            "embed_dim must be in 1..={}, got {}",
            prior.total_dim(),
            cfg.embed_dim
        )));
    }
    if cfg.n_sims < 2 {
        return Err(Error::Config("regression summary needs at least two simulations".into()));
    }
    let theta = prior.sample(key.fold_in(0), cfg.n_sims)?;
    let y = simulator(key.fold_in(1), &theta)?;
    let target = theta.flatten().slice_cols(0, cfg.embed_dim);
    let (y_mean, y_std) = scale_buffers(&y);
    let (t_mean, t_std) = scale_buffers(&target);
    let data = Dataset::new(
        standardize(&y, &y_mean, &y_std),
        ThetaBatch::from_entries(vec![("target".into(), standardize(&target, &t_mean, &t_std))])?,
    )?;
    let spec = MlpSpec::new(y.cols(), cfg.embed_dim, &cfg.hidden_sizes);
    spec.validate()?;
    let mut params = NetParams::new();
    spec.init(PREFIX, key.fold_in(2), &mut params)?;
    let (mut params, profile) = fit_loop(&MseRegression(&spec), params, &data, key.fold_in(3), &cfg.fit)?;
    params.insert_buffer("y_mean", y_mean);
    params.insert_buffer("y_std", y_std);
    params.insert_buffer("t_mean", t_mean);
    params.insert_buffer("t_std", t_std);
    Ok((RegressionSummary { spec, params }, profile))
}
