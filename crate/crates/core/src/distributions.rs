//! The closed set of elementary distributions used by priors and models.

use rand::Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Tensor};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub loc: Vec<f64>,
    pub scales: Vec<f64>,
}

/// An independent (per-coordinate) distribution over a real event vector.
///
/// `Normal`, `HalfNormal` and `Uniform` are batches of independent scalars,
/// one per entry of their parameter vectors. `Categorical` has event
/// dimension one and yields the category index as a float.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    Normal { loc: Vec<f64>, scale: Vec<f64> },
    HalfNormal { scale: Vec<f64> },
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
    Categorical { logits: Vec<f64> },
    DiagMvNormal { loc: Vec<f64>, scales: Vec<f64> },
    MixtureSameFamily {
        weights: Vec<f64>,
        components: Vec<MixtureComponent>,
    },
}

/// Per-coordinate support, used to build unconstraining transforms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Support {
    Real,
    NonNegative,
    Interval(f64, f64),
    Discrete(usize),
}

fn normal_lp(x: f64, loc: f64, scale: f64) -> f64 {
    let z = (x - loc) / scale;
    -0.5 * z * z - scale.ln() - 0.5 * LN_2PI
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl Distribution {
    pub fn normal(loc: f64, scale: f64) -> Self {
        Distribution::Normal {
            loc: vec![loc],
            scale: vec![scale],
        }
    }

    /// `dim` iid copies of `Normal(loc, scale)`.
    pub fn normal_iid(dim: usize, loc: f64, scale: f64) -> Self {
        Distribution::Normal {
            loc: vec![loc; dim],
            scale: vec![scale; dim],
        }
    }

    pub fn half_normal(scale: f64) -> Self {
        Distribution::HalfNormal { scale: vec![scale] }
    }

    pub fn uniform(lo: f64, hi: f64) -> Self {
        Distribution::Uniform {
            lo: vec![lo],
            hi: vec![hi],
        }
    }

    pub fn uniform_iid(dim: usize, lo: f64, hi: f64) -> Self {
        Distribution::Uniform {
            lo: vec![lo; dim],
            hi: vec![hi; dim],
        }
    }

    pub fn event_dim(&self) -> usize {
        match self {
            Distribution::Normal { loc, .. } | Distribution::DiagMvNormal { loc, .. } => loc.len(),
            Distribution::HalfNormal { scale } => scale.len(),
            Distribution::Uniform { lo, .. } => lo.len(),
            Distribution::Categorical { .. } => 1,
            Distribution::MixtureSameFamily { components, .. } => {
                components.first().map_or(0, |c| c.loc.len())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let positive = |v: &[f64]| v.iter().all(|s| s.is_finite() && *s > 0.0);
        let finite = |v: &[f64]| v.iter().all(|s| s.is_finite());
        match self {
            Distribution::Normal { loc, scale: s } | Distribution::DiagMvNormal { loc, scales: s } => {
                if loc.is_empty() || loc.len() != s.len() {
                    return bad(format!("normal: loc/scale lengths {} vs {}", loc.len(), s.len()));
                }
                if !finite(loc) || !positive(s) {
                    return bad("normal: non-finite loc or non-positive scale".into());
                }
            }
            Distribution::HalfNormal { scale } => {
                if scale.is_empty() || !positive(scale) {
                    return bad("half-normal: scale must be positive".into());
                }
            }
            Distribution::Uniform { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() {
                    return bad("uniform: lo/hi lengths differ".into());
                }
                if lo.iter().zip(hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h)) {
                    return bad("uniform: need finite lo < hi".into());
                }
            }
            Distribution::Categorical { logits } => {
                if logits.is_empty() || !finite(logits) {
                    return bad("categorical: logits must be finite and non-empty".into());
                }
            }
            Distribution::MixtureSameFamily {
                weights,
                components,
            } => {
                if weights.is_empty() || weights.len() != components.len() {
                    return bad("mixture: weights/components lengths differ".into());
                }
                if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
                    || weights.iter().sum::<f64>() <= 0.0
                {
                    return bad("mixture: weights must be non-negative with positive sum".into());
                }
                let d = components[0].loc.len();
                for c in components {
                    if c.loc.len() != d || c.scales.len() != d || d == 0 {
                        return bad("mixture: component dimension mismatch".into());
                    }
                    if !finite(&c.loc) || !positive(&c.scales) {
                        return bad("mixture: bad component parameters".into());
                    }
                }
            }
        }
        Ok(())
    }

    pub fn support(&self) -> Vec<Support> {
        match self {
            Distribution::Normal { loc, .. } | Distribution::DiagMvNormal { loc, .. } => {
                vec![Support::Real; loc.len()]
            }
            Distribution::HalfNormal { scale } => vec![Support::NonNegative; scale.len()],
            Distribution::Uniform { lo, hi } => {
                lo.iter().zip(hi).map(|(&l, &h)| Support::Interval(l, h)).collect()
            }
            Distribution::Categorical { logits } => vec![Support::Discrete(logits.len())],
            Distribution::MixtureSameFamily { .. } => vec![Support::Real; self.event_dim()],
        }
    }

    fn normalized_log_weights(w: &[f64]) -> Vec<f64> {
        let total: f64 = w.iter().sum();
        w.iter().map(|x| (x / total).ln()).collect()
    }

    fn log_softmax(logits: &[f64]) -> Vec<f64> {
        let lse = log_sum_exp(logits);
        logits.iter().map(|l| l - lse).collect()
    }

    /// Draw `n` events as an `n × event_dim` matrix.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Tensor {
        let d = self.event_dim();
        let mut out = Vec::with_capacity(n * d);
        let std_normal = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
        for _ in 0..n {
            match self {
                Distribution::Normal { loc, scale: s } | Distribution::DiagMvNormal { loc, scales: s } => {
                    for (m, s) in loc.iter().zip(s) {
                        out.push(m + s * std_normal(rng));
                    }
                }
                Distribution::HalfNormal { scale } => {
                    for s in scale {
                        out.push((s * std_normal(rng)).abs());
                    }
                }
                Distribution::Uniform { lo, hi } => {
                    for (l, h) in lo.iter().zip(hi) {
                        let u: f64 = rng.random();
                        out.push(l + (h - l) * u);
                    }
                }
                Distribution::Categorical { logits } => {
                    out.push(sample_categorical(rng, &Self::log_softmax(logits)) as f64);
                }
                Distribution::MixtureSameFamily {
                    weights,
                    components,
                } => {
                    let k = sample_categorical(rng, &Self::normalized_log_weights(weights));
                    let c = &components[k];
                    for (m, s) in c.loc.iter().zip(&c.scales) {
                        out.push(m + s * std_normal(rng));
                    }
                }
            }
        }
        Tensor::matrix(n, d, out)
    }

    /// Log-density of one event; `-inf` outside the support.
    pub fn log_prob(&self, x: &[f64]) -> f64 {
        match self {
            Distribution::Normal { loc, scale: s } | Distribution::DiagMvNormal { loc, scales: s } => x
                .iter()
                .zip(loc)
                .zip(s)
                .map(|((&x, &m), &s)| normal_lp(x, m, s))
                .sum(),
            Distribution::HalfNormal { scale } => x
                .iter()
                .zip(scale)
                .map(|(&x, &s)| {
                    if x < 0.0 {
                        f64::NEG_INFINITY
                    } else {
                        0.5 * (2.0 / std::f64::consts::PI).ln() - s.ln() - 0.5 * (x / s).powi(2)
                    }
                })
                .sum(),
            Distribution::Uniform { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(&x, (&l, &h))| {
                    if x < l || x > h || x.is_nan() {
                        f64::NEG_INFINITY
                    } else {
                        -(h - l).ln()
                    }
                })
                .sum(),
            Distribution::Categorical { logits } => {
                let v = x[0];
                if v.fract() != 0.0 || v < 0.0 || v >= logits.len() as f64 {
                    f64::NEG_INFINITY
                } else {
                    Self::log_softmax(logits)[v as usize]
                }
            }
            Distribution::MixtureSameFamily {
                weights,
                components,
            } => {
                let lw = Self::normalized_log_weights(weights);
                let terms: Vec<f64> = components
                    .iter()
                    .zip(&lw)
                    .map(|(c, lw)| {
                        lw + x
                            .iter()
                            .zip(&c.loc)
                            .zip(&c.scales)
                            .map(|((&x, &m), &s)| normal_lp(x, m, s))
                            .sum::<f64>()
                    })
                    .collect();
                log_sum_exp(&terms)
            }
        }
    }
}

/// Inverse-CDF draw of a category index from normalized log-probabilities.
pub fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, log_probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return k;
        }
    }
    log_probs.len() - 1
}
