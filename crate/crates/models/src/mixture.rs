//! θ ∼ N₂(0, I), y | θ ∼ ½N₂(θ, I) + ½N₂(θ, 0.1²I).

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use sbi_core::distributions::{log_sum_exp, LN_2PI};
use sbi_core::{Distribution, PriorSpec, Tensor};

use crate::BenchmarkModel;

pub const MIXTURE_SCALES: [f64; 2] = [1.0, 0.1];

pub fn mixture_model() -> BenchmarkModel {
    let prior = PriorSpec::new(vec![("theta", Distribution::normal_iid(2, 0.0, 1.0))]).expect("valid prior");
    BenchmarkModel {
        name: "mixture".into(),
        prior,
        simulator: Arc::new(|key, theta| {
            let t = theta.get("theta").expect("theta");
            let n = theta.n();
            let mut rng = key.rng();
            let mut y = Vec::with_capacity(2 * n);
            for i in 0..n {
                let s = MIXTURE_SCALES[rng.random_range(0..2)];
                for j in 0..2 {
                    let z: f64 = rng.sample(StandardNormal);
                    y.push(t.get(i, j) + s * z);
                }
            }
            Ok(Tensor::matrix(n, 2, y))
        }),
        y_dim: 2,
        observation: Some(vec![-1.0, 1.0]),
        log_likelihood: Some(Arc::new(log_likelihood)),
    }
}

fn log_likelihood(theta: &[f64], y: &[f64]) -> f64 {
    let r2 = (y[0] - theta[0]).powi(2) + (y[1] - theta[1]).powi(2);
    let comps: Vec<f64> = MIXTURE_SCALES
        .iter()
        .map(|s| 0.5f64.ln() - LN_2PI - 2.0 * s.ln() - 0.5 * r2 / (s * s))
        .collect();
    log_sum_exp(&comps)
}
