//! Inference engines behind one lifecycle: simulate data, fit a neural
//! surrogate, sample the posterior, and repeat sequentially.
//!
//! - `nle` learns `q(y | θ)` and samples `q(y_obs | θ) π(θ)` by MCMC.
//! - `npe` learns `q(θ | y)` and samples it directly.
//! - `fmpe` learns a flow-matching vector field for `θ | y`.
//! - `nre` learns `log h(y, θ)` and samples `h(y_obs, θ) π(θ)` by MCMC.
//!
//! Engines are immutable; the trained state is an explicit [`NetParams`].

mod posterior;
mod result;
mod surrogate;
pub mod transform;

use log::{info, warn};
use sbi_core::{stack_data, Dataset, Error, PriorSpec, Result, RngKey, SimulatorFn, Tensor, ThetaBatch};
use sbi_estimators::{EventSide, Training};
use sbi_mcmc::{Diagnostics, SamplerConfig};
use sbi_ndnet::{fit_loop, FitConfig, LossProfile, NetParams};
use serde::{Deserialize, Serialize};

pub use posterior::SurrogatePosterior;
pub use result::InferenceResult;
pub use surrogate::{EstimatorConfig, Scaling, Surrogate};
pub use transform::Unconstrain;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Nle,
    Npe,
    Fmpe,
    Nre,
}

impl EngineKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nle" => Ok(EngineKind::Nle),
            "npe" => Ok(EngineKind::Npe),
            "fmpe" => Ok(EngineKind::Fmpe),
            "nre" => Ok(EngineKind::Nre),
            other => Err(Error::Config(format!("unknown engine '{other}' (nle, npe, fmpe, nre)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EngineKind::Nle => "nle",
            EngineKind::Npe => "npe",
            EngineKind::Fmpe => "fmpe",
            EngineKind::Nre => "nre",
        }
    }

    pub fn default_estimator(self) -> EstimatorConfig {
        match self {
            EngineKind::Nle | EngineKind::Npe => EstimatorConfig::default_maf(),
            EngineKind::Fmpe => EstimatorConfig::default_cnf(),
            EngineKind::Nre => EstimatorConfig::default_nre(),
        }
    }

    /// Whether the posterior is reached through MCMC on a learned target.
    pub fn uses_mcmc(self) -> bool {
        matches!(self, EngineKind::Nle | EngineKind::Nre)
    }

    fn side(self) -> EventSide {
        match self {
            EngineKind::Nle => EventSide::Y,
            _ => EventSide::Theta,
        }
    }
}

fn default_support_rounds() -> usize {
    100
}

fn default_init_candidates() -> usize {
    100
}

fn yes() -> bool {
    true
}

/// Settings shared by every engine kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub kind: EngineKind,
    /// Defaults to MAF for nle/npe, CNF for fmpe and the ratio net for nre.
    #[serde(default)]
    pub estimator: Option<EstimatorConfig>,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub fit: FitConfig,
    /// Redraw rounds for surrogate draws outside the prior support.
    #[serde(default = "default_support_rounds")]
    pub max_support_rounds: usize,
    /// Prior candidates scored per chain when choosing MCMC starts.
    #[serde(default = "default_init_candidates")]
    pub init_candidates: usize,
    /// Start each sequential round's fit from the previous parameters.
    #[serde(default = "yes")]
    pub warm_start: bool,
}

impl EngineConfig {
    pub fn new(kind: EngineKind) -> Self {
        EngineConfig {
            kind,
            estimator: None,
            sampler: SamplerConfig::default(),
            fit: FitConfig::default(),
            max_support_rounds: default_support_rounds(),
            init_candidates: default_init_candidates(),
            warm_start: true,
        }
    }

    pub fn estimator(&self) -> EstimatorConfig {
        self.estimator.clone().unwrap_or_else(|| self.kind.default_estimator())
    }
}

#[derive(Clone)]
pub struct Engine {
    pub config: EngineConfig,
    pub prior: PriorSpec,
    pub simulator: SimulatorFn,
    pub surrogate: Surrogate,
    pub theta_dim: usize,
    pub y_dim: usize,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("config", &self.config)
            .field("prior", &self.prior)
            .field("theta_dim", &self.theta_dim)
            .field("y_dim", &self.y_dim)
            .finish_non_exhaustive()
    }
}

/// Key used for the construction-time probe simulation.
const PROBE_SEED: u64 = 0x5eed;

impl Engine {
    /// Build an engine; one probe simulation fixes the data dimension.
    pub fn new(config: EngineConfig, prior: PriorSpec, simulator: SimulatorFn) -> Result<Self> {
        let est = config.estimator();
        let allowed = match config.kind {
            EngineKind::Nle | EngineKind::Npe => matches!(est, EstimatorConfig::Maf { .. } | EstimatorConfig::Mdn { .. }),
            EngineKind::Fmpe => matches!(est, EstimatorConfig::Cnf { .. }),
            EngineKind::Nre => matches!(est, EstimatorConfig::Nre { .. }),
        };
        if !allowed {
            return Err(Error::Config(format!(
                "estimator '{}' cannot back a {} engine",
                est.name(),
                config.kind.name()
            )));
        }
        config.sampler.validate()?;
        let probe_theta = prior.sample(RngKey::new(PROBE_SEED), 1)?;
        let probe = simulator(RngKey::new(PROBE_SEED).fold_in(1), &probe_theta)?;
        if probe.rows() != 1 || probe.cols() == 0 {
            return Err(Error::Contract(format!(
                "probe simulation returned shape {:?}, expected 1 x d_y",
                probe.shape()
            )));
        }
        let theta_dim = prior.total_dim();
        let y_dim = probe.cols();
        let surrogate = match config.kind {
            EngineKind::Nle => Surrogate::build(&est, y_dim, theta_dim)?,
            _ => Surrogate::build(&est, theta_dim, y_dim)?,
        };
        Ok(Engine {
            config,
            prior,
            simulator,
            surrogate,
            theta_dim,
            y_dim,
        })
    }

    pub fn kind(&self) -> EngineKind {
        self.config.kind
    }

    /// Fresh network parameters (without scaling buffers).
    pub fn init_params(&self, key: RngKey) -> Result<NetParams> {
        self.surrogate.init(key)
    }

    /// Simulate `n` pairs. Without `params`, θ comes from the prior;
    /// otherwise from the current surrogate posterior at `observable`.
    pub fn simulate_data(
        &self,
        key: RngKey,
        n: usize,
        params: Option<&NetParams>,
        observable: Option<&[f64]>,
    ) -> Result<Dataset> {
        let theta = match params {
            None => self.prior.sample(key.fold_in(0), n)?,
            Some(p) => {
                let obs = observable
                    .ok_or_else(|| Error::Contract("sampling from a surrogate needs an observable".into()))?;
                let draws = self.posterior_draws(key.fold_in(0), p, obs, n)?;
                self.prior.unflatten(&draws)?
            }
        };
        let y = (self.simulator)(key.fold_in(1), &theta)?;
        Dataset::new(y, theta)
    }

    /// `n` θ rows from the surrogate posterior, pooled over chains for the
    /// MCMC engines.
    fn posterior_draws(&self, key: RngKey, params: &NetParams, observable: &[f64], n: usize) -> Result<Tensor> {
        if self.kind().uses_mcmc() {
            let mut cfg = self.config.sampler.clone();
            cfg.n_draws = n.div_ceil(cfg.n_chains).max(1);
            let chains = self.run_mcmc(key, params, observable, &cfg)?;
            let pooled = chains.pooled();
            Ok(pooled.slice_rows(0, n))
        } else {
            self.direct_draws(key, params, observable, n)
        }
    }

    /// Standardized training set in the layout the surrogate expects.
    fn scaled(&self, data: &Dataset, params: &NetParams) -> Result<Dataset> {
        let y = Scaling::load(params, "y")?.apply(&data.y);
        let theta = Scaling::load(params, "theta")?.apply(&data.theta.flatten());
        Dataset::new(y, ThetaBatch::from_entries(vec![("theta".into(), theta)])?)
    }

    /// Fit on `data`. `init` warm-starts from existing parameters and keeps
    /// their scaling; otherwise parameters are initialized from `key` and
    /// the scaling is taken from `data`.
    pub fn fit(
        &self,
        key: RngKey,
        data: &Dataset,
        init: Option<NetParams>,
        fit: &FitConfig,
    ) -> Result<(NetParams, LossProfile)> {
        if data.y_dim() != self.y_dim || data.theta.total_dim() != self.theta_dim {
            return Err(Error::Contract(format!(
                "dataset has y dim {} and theta dim {}, engine expects {} and {}",
                data.y_dim(),
                data.theta.total_dim(),
                self.y_dim,
                self.theta_dim
            )));
        }
        let (data, dropped) = data.clone().drop_non_finite();
        if dropped > 0 {
            warn!("dropped {dropped} simulations with non-finite values before fitting");
        }
        let mut params = match init {
            Some(p) => p,
            None => self.init_params(key.fold_in(0))?,
        };
        if !params.has_buffer("scale/y_mean") {
            Scaling::fit(&data.y).store(&mut params, "y");
            Scaling::fit(&data.theta.flatten()).store(&mut params, "theta");
        }
        let scaled = self.scaled(&data, &params)?;
        let objective = Training {
            loss: self.surrogate.train_loss(),
            side: self.kind().side(),
        };
        fit_loop(&objective, params, &scaled, key.fold_in(1), fit)
    }

    /// Posterior draws at `observable`. MCMC engines use the configured
    /// sampler with `n_samples` draws per chain; npe and fmpe return one
    /// chain of `n_samples` independent draws.
    pub fn sample_posterior(
        &self,
        key: RngKey,
        params: &NetParams,
        observable: &[f64],
        n_samples: usize,
        sampler: Option<&SamplerConfig>,
    ) -> Result<InferenceResult> {
        if n_samples == 0 {
            return Err(Error::Contract("n_samples must be >= 1".into()));
        }
        self.check_observable(observable)?;
        let names = self.prior.coordinate_names();
        let (chains, diagnostics) = if self.kind().uses_mcmc() {
            let mut cfg = sampler.cloned().unwrap_or_else(|| self.config.sampler.clone());
            cfg.n_draws = n_samples;
            let mut cs = self.run_mcmc(key, params, observable, &cfg)?;
            cs.names = names;
            let d = Diagnostics::compute(&cs);
            (cs, d)
        } else {
            let draws = self.direct_draws(key, params, observable, n_samples)?;
            let cs = sbi_mcmc::ChainSet::new(names, vec![draws])?;
            let d = Diagnostics::ess_only(&cs);
            (cs, d)
        };
        Ok(InferenceResult {
            kind: self.kind(),
            layout: self.prior.layout(),
            posterior: chains,
            observed: observable.to_vec(),
            diagnostics,
        })
    }

    fn check_observable(&self, observable: &[f64]) -> Result<()> {
        if observable.len() != self.y_dim {
            return Err(Error::Contract(format!(
                "observable has {} entries, the simulator produces {}",
                observable.len(),
                self.y_dim
            )));
        }
        if observable.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("observable must be finite".into()));
        }
        Ok(())
    }

    /// Learned log density on the raw scale: `log q(y | θ)` for nle,
    /// `log q(θ | y)` for npe and fmpe, `log h(y, θ)` for nre.
    pub fn log_prob(&self, params: &NetParams, y: &Tensor, theta: &Tensor) -> Result<Vec<f64>> {
        let ys = Scaling::load(params, "y")?;
        let ts = Scaling::load(params, "theta")?;
        let (y_s, t_s) = (ys.apply(y), ts.apply(theta));
        match self.kind() {
            EngineKind::Nle => Ok(self
                .surrogate
                .log_prob(params, &y_s, &t_s)?
                .into_iter()
                .map(|v| v - ys.log_det())
                .collect()),
            EngineKind::Npe | EngineKind::Fmpe => Ok(self
                .surrogate
                .log_prob(params, &t_s, &y_s)?
                .into_iter()
                .map(|v| v - ts.log_det())
                .collect()),
            EngineKind::Nre => self.surrogate.log_prob(params, &t_s, &y_s),
        }
    }

    /// The unnormalized log posterior the MCMC engines target, on the
    /// constrained scale.
    pub fn surrogate_posterior<'a>(&'a self, params: &'a NetParams, observable: &[f64]) -> Result<SurrogatePosterior<'a>> {
        if !self.kind().uses_mcmc() {
            return Err(Error::Contract(format!("{} has no MCMC target", self.kind().name())));
        }
        self.check_observable(observable)?;
        SurrogatePosterior::new(self, params, observable)
    }

    fn run_mcmc(
        &self,
        key: RngKey,
        params: &NetParams,
        observable: &[f64],
        cfg: &SamplerConfig,
    ) -> Result<sbi_mcmc::ChainSet> {
        let target = self.surrogate_posterior(params, observable)?;
        let z = target.unconstrained();
        let init = target.initial_points(key.fold_in(0), cfg.n_chains, self.config.init_candidates)?;
        let chains = sbi_mcmc::sample(&z, &init, key.fold_in(1), cfg)?;
        chains.map_rows(|row| target.transform.forward(row))
    }

    /// Direct surrogate draws for npe/fmpe, redrawing any outside the prior
    /// support.
    fn direct_draws(&self, key: RngKey, params: &NetParams, observable: &[f64], n: usize) -> Result<Tensor> {
        self.check_observable(observable)?;
        let y_scale = Scaling::load(params, "y")?;
        let t_scale = Scaling::load(params, "theta")?;
        let ctx = y_scale.apply(&Tensor::row_vector(observable));
        let mut kept: Vec<f64> = Vec::with_capacity(n * self.theta_dim);
        let (mut n_kept, mut n_drawn) = (0usize, 0usize);
        for round in 0..self.config.max_support_rounds {
            let want = n - n_kept;
            let draws = t_scale.invert(&self.surrogate.sample(params, key.fold_in(round as u64), &ctx, want)?);
            n_drawn += want;
            for i in 0..draws.rows() {
                let row = draws.row(i);
                if row.iter().all(|v| v.is_finite()) && self.prior.log_prob_flat(row).is_finite() {
                    kept.extend_from_slice(row);
                    n_kept += 1;
                }
            }
            if n_kept == n {
                break;
            }
        }
        let rate = 1.0 - n_kept as f64 / n_drawn as f64;
        if n_kept < n {
            return Err(Error::Budget(format!(
                "only {n_kept} of {n} surrogate draws fell inside the prior support \
                 (support-violation rate {rate:.3})"
            )));
        }
        if rate > 0.5 {
            warn!("{:.1}% of surrogate posterior draws fell outside the prior support", 100.0 * rate);
        }
        Ok(Tensor::matrix(n, self.theta_dim, kept))
    }

    /// Sequential inference: per round, simulate `n_per_round` pairs from
    /// the current surrogate (the prior in round one), append them to the
    /// data set and refit on everything.
    pub fn sequential_run(
        &self,
        key: RngKey,
        observable: &[f64],
        n_rounds: usize,
        n_per_round: usize,
    ) -> Result<(NetParams, Dataset, Vec<LossProfile>)> {
        if n_rounds == 0 || n_per_round == 0 {
            return Err(Error::Config("n_rounds and n_per_round must be >= 1".into()));
        }
        self.check_observable(observable)?;
        if n_rounds > 1 && !self.kind().uses_mcmc() {
            warn!(
                "sequential {} draws proposals from the surrogate posterior; the fitted \
                 model then targets the proposal posterior, so take care interpreting it",
                self.kind().name()
            );
        }
        let mut params: Option<NetParams> = None;
        let mut data: Option<Dataset> = None;
        let mut profiles = Vec::with_capacity(n_rounds);
        for r in 0..n_rounds {
            let kr = key.fold_in(r as u64);
            let fresh = self.simulate_data(kr.fold_in(0), n_per_round, params.as_ref(), Some(observable))?;
            let all = stack_data(data.as_ref(), fresh)?;
            let init = if self.config.warm_start { params.take() } else { None };
            let (p, profile) = self.fit(kr.fold_in(1), &all, init, &self.config.fit)?;
            info!(
                "round {}/{n_rounds}: {} pairs, {} epochs, best val {:.4}",
                r + 1,
                all.n(),
                profile.epochs(),
                profile.val.iter().cloned().fold(f64::INFINITY, f64::min)
            );
            params = Some(p);
            data = Some(all);
            profiles.push(profile);
        }
        Ok((params.expect("at least one round"), data.expect("at least one round"), profiles))
    }
}
