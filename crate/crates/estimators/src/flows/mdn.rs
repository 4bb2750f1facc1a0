//! Mixture density network: an MLP on the context emitting the logits,
//! means and log-scales of a diagonal Gaussian mixture.

use rand::Rng;
use rand_distr::StandardNormal;
use sbi_core::distributions::{log_sum_exp, sample_categorical, LN_2PI};
use sbi_core::{Error, Result, RngKey, Tensor};
use sbi_ndnet::{Activation, Graph, MlpSpec, NetParams, ParamVars, Var};
use serde::{Deserialize, Serialize};

use crate::{broadcast_rows, check_cols, TrainLoss, LOG_SCALE_BOUND};

const PREFIX: &str = "mdn";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdnSpec {
    pub event_dim: usize,
    pub context_dim: usize,
    pub n_components: usize,
    pub hidden_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl MdnSpec {
    pub fn new(event_dim: usize, context_dim: usize, n_components: usize, hidden_sizes: &[usize]) -> Self {
        MdnSpec {
            event_dim,
            context_dim,
            n_components,
            hidden_sizes: hidden_sizes.to_vec(),
            activation: Activation::Tanh,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Mdn {
    pub spec: MdnSpec,
    net: MlpSpec,
}

/// Mixture parameters for one batch: logits `n × K`, means and log-scales
/// `n × K·d` (component `k` in columns `k·d..(k+1)·d`).
pub struct MixtureParams {
    pub logits: Tensor,
    pub means: Tensor,
    pub log_scales: Tensor,
}

impl Mdn {
    pub fn new(spec: MdnSpec) -> Result<Self> {
        if spec.event_dim == 0 || spec.n_components == 0 || spec.context_dim == 0 {
            return Err(Error::Config(
                "MDN needs event_dim, context_dim and n_components >= 1".into(),
            ));
        }
        let k = spec.n_components;
        let mut net = MlpSpec::new(spec.context_dim, k + 2 * k * spec.event_dim, &spec.hidden_sizes);
        net.activation = spec.activation;
        Ok(Mdn { spec, net })
    }

    /// The output heads use the same fan-in scale as the hidden layers;
    /// near-identical components would sit on a flat saddle.
    pub fn init(&self, key: RngKey) -> Result<NetParams> {
        let mut p = NetParams::new();
        self.net.init_with_final_std(PREFIX, key, &mut p, None)?;
        Ok(p)
    }

    fn check(&self, x: &Tensor, ctx: &Tensor) -> Result<()> {
        check_cols("MDN input", x, self.spec.event_dim)?;
        check_cols("MDN context", ctx, self.spec.context_dim)?;
        if ctx.rows() != x.rows() {
            return Err(Error::Contract("context and input row counts differ".into()));
        }
        Ok(())
    }

    /// Per-row log-density, `n × 1`.
    pub fn log_prob_var<'g>(&self, pv: &ParamVars<'g>, x: Var<'g>, ctx: Var<'g>) -> Result<Var<'g>> {
        let (k, d) = (self.spec.n_components, self.spec.event_dim);
        let out = self.net.forward(pv, PREFIX, ctx, None)?;
        let logits = out.slice_cols(0, k);
        let log_w = logits.add_col(-logits.logsumexp_rows());
        let comps: Vec<Var> = (0..k)
            .map(|c| {
                let mu = out.slice_cols(k + c * d, k + (c + 1) * d);
                let s = out
                    .slice_cols(k + k * d + c * d, k + k * d + (c + 1) * d)
                    .clamp(-LOG_SCALE_BOUND, LOG_SCALE_BOUND);
                let z = (x - mu) * (-s).exp();
                (z.square().scale(-0.5) - s)
                    .sum_rows()
                    .add_scalar(-0.5 * d as f64 * LN_2PI)
            })
            .collect();
        Ok((log_w + Var::concat_cols(&comps)).logsumexp_rows())
    }

    pub fn log_prob(&self, params: &NetParams, x: &Tensor, ctx: &Tensor) -> Result<Vec<f64>> {
        self.check(x, ctx)?;
        let g = Graph::new();
        let pv = ParamVars::fixed(&g, params);
        let lp = self.log_prob_var(&pv, g.constant(x.clone()), g.constant(ctx.clone()))?;
        Ok(lp.value().data().to_vec())
    }

    pub fn mixture(&self, params: &NetParams, ctx: &Tensor) -> Result<MixtureParams> {
        check_cols("MDN context", ctx, self.spec.context_dim)?;
        let (k, d) = (self.spec.n_components, self.spec.event_dim);
        let out = self.net.forward_plain(params, PREFIX, ctx, None)?;
        Ok(MixtureParams {
            logits: out.slice_cols(0, k),
            means: out.slice_cols(k, k + k * d),
            log_scales: out
                .slice_cols(k + k * d, k + 2 * k * d)
                .map(|s| s.clamp(-LOG_SCALE_BOUND, LOG_SCALE_BOUND)),
        })
    }

    /// `n` draws given a context with one row (or `n` rows).
    pub fn sample(&self, params: &NetParams, key: RngKey, ctx: &Tensor, n: usize) -> Result<Tensor> {
        let d = self.spec.event_dim;
        let ctx = broadcast_rows(ctx, n);
        let mix = self.mixture(params, &ctx)?;
        let mut rng = key.rng();
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            let lse = log_sum_exp(mix.logits.row(i));
            let log_w: Vec<f64> = mix.logits.row(i).iter().map(|l| l - lse).collect();
            let c = sample_categorical(&mut rng, &log_w);
            for j in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                out.push(mix.means.get(i, c * d + j) + mix.log_scales.get(i, c * d + j).exp() * z);
            }
        }
        Ok(Tensor::matrix(n, d, out))
    }
}

impl TrainLoss for Mdn {
    /// Mean negative log-likelihood.
    fn batch_loss<'g>(
        &self,
        g: &'g Graph,
        pv: &ParamVars<'g>,
        event: &Tensor,
        context: &Tensor,
        _key: RngKey,
    ) -> Result<Var<'g>> {
        self.check(event, context)?;
        let lp = self.log_prob_var(pv, g.constant(event.clone()), g.constant(context.clone()))?;
        Ok(-lp.mean())
    }
}
