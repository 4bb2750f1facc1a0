//! Contrastive neural ratio estimation.
//!
//! A classifier `h(y, θ) = exp(log_h)` decides which of `C` candidate
//! parameter sets, if any, generated `y`. With class prior odds `γ`,
//! `p(c = 0) = C / (C + γΣh)` and `p(c) = γh_c / (C + γΣh)`.

use sbi_core::{Error, Result, RngKey, Tensor};
use sbi_ndnet::{Activation, Graph, MlpSpec, NetParams, ParamVars, Var};
use serde::{Deserialize, Serialize};

use crate::{check_cols, TrainLoss};

const PREFIX: &str = "nre";

fn default_contrast() -> usize {
    5
}

fn default_gamma() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NreSpec {
    pub theta_dim: usize,
    pub y_dim: usize,
    pub hidden_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_contrast")]
    pub n_contrast: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

impl NreSpec {
    pub fn new(theta_dim: usize, y_dim: usize, hidden_sizes: &[usize]) -> Self {
        NreSpec {
            theta_dim,
            y_dim,
            hidden_sizes: hidden_sizes.to_vec(),
            activation: Activation::Tanh,
            n_contrast: default_contrast(),
            gamma: default_gamma(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Nre {
    pub spec: NreSpec,
    net: MlpSpec,
}

/// Row-wise class log-probabilities from `log h` values (`n × C`).
/// Column 0 is the "no set generated y" class.
pub fn class_log_probs(log_h: &Tensor, gamma: f64) -> Tensor {
    let (n, c) = (log_h.rows(), log_h.cols());
    let log_c = (c as f64).ln();
    let log_gamma = gamma.ln();
    let mut out = Tensor::zeros(&[n, c + 1]);
    for i in 0..n {
        let mut terms = vec![log_c];
        terms.extend(log_h.row(i).iter().map(|l| log_gamma + l));
        let lse = sbi_core::distributions::log_sum_exp(&terms);
        for (k, t) in terms.iter().enumerate() {
            out.set(i, k, t - lse);
        }
    }
    out
}

/// Row `i` of the result is row `(i + shift) mod n` of `t`.
fn roll(t: &Tensor, shift: usize) -> Tensor {
    let n = t.rows();
    let idx: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
    t.select_rows(&idx)
}

impl Nre {
    pub fn new(spec: NreSpec) -> Result<Self> {
        if spec.n_contrast == 0 {
            return Err(Error::Config("n_contrast must be >= 1".into()));
        }
        if !(spec.gamma > 0.0 && spec.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma {} must be positive", spec.gamma)));
        }
        let mut net = MlpSpec::new(spec.y_dim + spec.theta_dim, 1, &spec.hidden_sizes);
        net.activation = spec.activation;
        Ok(Nre { spec, net })
    }

    pub fn init(&self, key: RngKey) -> Result<NetParams> {
        let mut p = NetParams::new();
        self.net.init(PREFIX, key, &mut p)?;
        Ok(p)
    }

    fn input(&self, y: &Tensor, theta: &Tensor) -> Result<Tensor> {
        check_cols("NRE y", y, self.spec.y_dim)?;
        check_cols("NRE theta", theta, self.spec.theta_dim)?;
        if y.rows() != theta.rows() {
            return Err(Error::Contract("y and theta row counts differ".into()));
        }
        Tensor::concat_cols(&[y, theta])
    }

    /// `log h(y, θ)` per row.
    pub fn log_h(&self, params: &NetParams, y: &Tensor, theta: &Tensor) -> Result<Vec<f64>> {
        let out = self.net.forward_plain(params, PREFIX, &self.input(y, theta)?, None)?;
        Ok(out.into_data())
    }

    /// Estimated log likelihood-to-evidence ratio; equal to `log_h`.
    pub fn log_ratio(&self, params: &NetParams, y: &Tensor, theta: &Tensor) -> Result<Vec<f64>> {
        self.log_h(params, y, theta)
    }

    fn log_h_var<'g>(&self, g: &'g Graph, pv: &ParamVars<'g>, y: &Tensor, theta: &Tensor) -> Result<Var<'g>> {
        self.net
            .forward(pv, PREFIX, g.constant(self.input(y, theta)?), None)
    }
}

impl TrainLoss for Nre {
    /// `−[p₀ log p(c=0 | marginal set) + C·p_C log p(c=C | dependent set)]`
    /// averaged over anchors. Contrasts for anchor `i` are rows
    /// `i+1, …` of the batch (cyclically); the dependent set puts the true
    /// `θ_i` in the last slot.
    fn batch_loss<'g>(
        &self,
        g: &'g Graph,
        pv: &ParamVars<'g>,
        theta: &Tensor,
        y: &Tensor,
        _key: RngKey,
    ) -> Result<Var<'g>> {
        let c = self.spec.n_contrast;
        let n = theta.rows();
        if n < c + 1 {
            return Err(Error::Contract(format!(
                "NRE batch of {n} rows needs at least {} for {c} contrasts",
                c + 1
            )));
        }
        let gamma = self.spec.gamma;
        let (log_c, log_gamma) = ((c as f64).ln(), gamma.ln());
        // shifted[k] = log h(y_i, θ_{i+k})
        let shifted: Vec<Var> = (0..=c)
            .map(|k| self.log_h_var(g, pv, y, &roll(theta, k)))
            .collect::<Result<_>>()?;
        let const_col = g.constant(Tensor::full(&[n, 1], log_c));
        let scaled = |v: Var<'g>| v.add_scalar(log_gamma);

        let mut marginal = vec![const_col];
        marginal.extend(shifted[1..=c].iter().map(|&v| scaled(v)));
        let log_p0 = const_col - Var::concat_cols(&marginal).logsumexp_rows();

        let mut dependent = vec![const_col];
        dependent.extend(shifted[1..c].iter().map(|&v| scaled(v)));
        dependent.push(scaled(shifted[0]));
        let log_pc = scaled(shifted[0]) - Var::concat_cols(&dependent).logsumexp_rows();

        let p0 = 1.0 / (1.0 + gamma);
        let cpc = gamma / (1.0 + gamma);
        Ok(-(log_p0.scale(p0) + log_pc.scale(cpc)).mean())
    }

    fn min_batch(&self) -> usize {
        self.spec.n_contrast + 1
    }
}
