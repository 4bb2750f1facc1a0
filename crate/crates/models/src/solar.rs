//! Solar dynamo recursion
//! `y_{t+1} = α_t f(y_t) y_t + ε_t`, `α_t ∼ U(θ₁, θ₁ + θ₂)`, `ε_t ∼ U(0, θ₃)`,
//! with `f(y) = ½[1 + erf((y − b₁)/w₁)][1 − erf((y − b₂)/w₂)]`.
//! The likelihood is intractable.

use std::sync::Arc;

use rand::Rng;
use sbi_core::{Distribution, PriorSpec, Tensor};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::BenchmarkModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolarDynamoConfig {
    /// Number of simulated steps; `y` holds `y_1..y_T`.
    pub n_steps: usize,
    pub b1: f64,
    pub w1: f64,
    pub b2: f64,
    pub w2: f64,
    pub y0: f64,
    pub prior_lo: [f64; 3],
    pub prior_hi: [f64; 3],
}

impl Default for SolarDynamoConfig {
    fn default() -> Self {
        SolarDynamoConfig {
            n_steps: 100,
            b1: 1.0,
            w1: 0.8,
            b2: 7.0,
            w2: 0.8,
            y0: 1.0,
            prior_lo: [0.9, 0.0, 0.0],
            prior_hi: [1.4, 1.0, 0.2],
        }
    }
}

impl SolarDynamoConfig {
    pub fn f(&self, y: f64) -> f64 {
        0.5 * (1.0 + erf((y - self.b1) / self.w1)) * (1.0 - erf((y - self.b2) / self.w2))
    }

    /// One trajectory `y_1..y_T` given per-step uniforms for α and ε.
    pub fn trajectory(&self, theta: &[f64], mut uniforms: impl FnMut() -> (f64, f64)) -> Vec<f64> {
        let mut y = self.y0;
        (0..self.n_steps)
            .map(|_| {
                let (ua, ue) = uniforms();
                let alpha = theta[0] + theta[1] * ua;
                let eps = theta[2] * ue;
                y = alpha * self.f(y) * y + eps;
                y
            })
            .collect()
    }
}

pub fn solar_dynamo_model(cfg: &SolarDynamoConfig) -> BenchmarkModel {
    let prior = PriorSpec::new(vec![(
        "theta",
        Distribution::Uniform {
            lo: cfg.prior_lo.to_vec(),
            hi: cfg.prior_hi.to_vec(),
        },
    )])
    .expect("valid prior");
    let c = cfg.clone();
    BenchmarkModel {
        name: "solar_dynamo".into(),
        prior,
        simulator: Arc::new(move |key, theta| {
            let t = theta.get("theta").expect("theta");
            let mut rng = key.rng();
            let n = theta.n();
            let mut y = Vec::with_capacity(n * c.n_steps);
            for i in 0..n {
                y.extend(c.trajectory(t.row(i), || (rng.random::<f64>(), rng.random::<f64>())));
            }
            Ok(Tensor::matrix(n, c.n_steps, y))
        }),
        y_dim: cfg.n_steps,
        observation: None,
        log_likelihood: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sbi_core::{RngKey, ThetaBatch};

    #[test]
    fn degenerate_noise_gives_deterministic_recursion() {
        let cfg = SolarDynamoConfig::default();
        let m = solar_dynamo_model(&cfg);
        let theta = ThetaBatch::from_entries(vec![("theta".into(), Tensor::matrix(1, 3, vec![1.2, 0.0, 0.0]))]).unwrap();
        let y = m.simulate(RngKey::new(3), &theta).unwrap();
        let mut prev = cfg.y0;
        for t in 0..cfg.n_steps {
            let want = 1.2 * cfg.f(prev) * prev;
            assert_eq!(y.get(0, t), want);
            prev = want;
        }
    }

    #[test]
    fn f_stays_within_erf_bounds() {
        let cfg = SolarDynamoConfig::default();
        for i in 0..=4000 {
            let v = cfg.f(-20.0 + 0.01 * i as f64);
            assert!((0.0..=2.0).contains(&v));
        }
        // The bound is approached between the two thresholds.
        assert!(cfg.f(4.0) > 1.99);
    }
}
