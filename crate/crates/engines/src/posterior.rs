//! Unnormalized surrogate posteriors for the MCMC engines.

use sbi_core::{Error, Result, RngKey, Tensor};
use sbi_mcmc::LogDensity;
use sbi_ndnet::NetParams;

use crate::surrogate::Scaling;
use crate::transform::Unconstrain;
use crate::{Engine, EngineKind};

/// `log q(y_obs | θ) + log π(θ)` for nle, `log h(y_obs, θ) + log π(θ)`
/// for nre.
pub struct SurrogatePosterior<'a> {
    engine: &'a Engine,
    params: &'a NetParams,
    obs: Tensor,
    y_scale: Scaling,
    t_scale: Scaling,
    pub transform: Unconstrain,
}

impl<'a> SurrogatePosterior<'a> {
    pub(crate) fn new(engine: &'a Engine, params: &'a NetParams, observable: &[f64]) -> Result<Self> {
        let y_scale = Scaling::load(params, "y")?;
        let t_scale = Scaling::load(params, "theta")?;
        Ok(SurrogatePosterior {
            engine,
            params,
            obs: y_scale.apply(&Tensor::row_vector(observable)),
            y_scale,
            t_scale,
            transform: Unconstrain::new(engine.prior.supports())?,
        })
    }

    /// Learned log-likelihood (nle, including the scaling Jacobian) or log
    /// ratio (nre) at θ.
    pub fn surrogate_term(&self, theta: &[f64]) -> f64 {
        let th = self.t_scale.apply(&Tensor::row_vector(theta));
        let out = match self.engine.kind() {
            EngineKind::Nle => self
                .engine
                .surrogate
                .log_prob(self.params, &self.obs, &th)
                .map(|v| v[0] - self.y_scale.log_det()),
            _ => self.engine.surrogate.log_prob(self.params, &th, &self.obs).map(|v| v[0]),
        };
        match out {
            Ok(v) if !v.is_nan() => v,
            _ => f64::NEG_INFINITY,
        }
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        let lp = self.engine.prior.log_prob_flat(theta);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        lp + self.surrogate_term(theta)
    }

    /// The same target in unconstrained coordinates.
    pub fn unconstrained(&self) -> Unconstrained<'_, 'a> {
        Unconstrained { post: self }
    }

    /// One unconstrained start per chain: the best of `candidates` prior
    /// draws under the target.
    pub fn initial_points(&self, key: RngKey, n_chains: usize, candidates: usize) -> Result<Tensor> {
        let dim = self.transform.dim();
        let mut out = Vec::with_capacity(n_chains * dim);
        for c in 0..n_chains {
            let draws = self.engine.prior.sample(key.fold_in(c as u64), candidates.max(1))?.flatten();
            let best = (0..draws.rows())
                .map(|i| self.transform.inverse(draws.row(i)))
                .filter(|z| z.iter().all(|v| v.is_finite()))
                .map(|z| (self.unconstrained().log_density(&z), z))
                .filter(|(lp, _)| lp.is_finite())
                .max_by(|a, b| a.0.total_cmp(&b.0));
            match best {
                Some((_, z)) => out.extend(z),
                None => {
                    return Err(Error::Numeric(format!(
                        "surrogate posterior is non-finite at all {candidates} candidate starts for chain {c}"
                    )))
                }
            }
        }
        Ok(Tensor::matrix(n_chains, dim, out))
    }
}

pub struct Unconstrained<'p, 'a> {
    post: &'p SurrogatePosterior<'a>,
}

impl LogDensity for Unconstrained<'_, '_> {
    fn dim(&self) -> usize {
        self.post.transform.dim()
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        let theta = self.post.transform.forward(z);
        self.post.log_density(&theta) + self.post.transform.log_jacobian(z)
    }
}
