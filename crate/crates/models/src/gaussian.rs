//! μ ∼ N₂(0, I), σ ∼ HalfNormal(1), y ∼ N₂(μ, σ²I).

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use sbi_core::distributions::LN_2PI;
use sbi_core::{Distribution, PriorSpec, Tensor};

use crate::BenchmarkModel;

pub fn gaussian_model() -> BenchmarkModel {
    let prior = PriorSpec::new(vec![
        ("mean", Distribution::normal_iid(2, 0.0, 1.0)),
        ("scale", Distribution::half_normal(1.0)),
    ])
    .expect("valid prior");
    BenchmarkModel {
        name: "gaussian".into(),
        prior,
        simulator: Arc::new(|key, theta| {
            let mean = theta.get("mean").expect("mean");
            let scale = theta.get("scale").expect("scale");
            let mut rng = key.rng();
            let n = theta.n();
            let mut y = Vec::with_capacity(2 * n);
            for i in 0..n {
                for j in 0..2 {
                    let z: f64 = rng.sample(StandardNormal);
                    y.push(mean.get(i, j) + scale.get(i, 0) * z);
                }
            }
            Ok(Tensor::matrix(n, 2, y))
        }),
        y_dim: 2,
        observation: None,
        log_likelihood: Some(Arc::new(log_likelihood)),
    }
}

/// `θ = (μ₁, μ₂, σ)`.
fn log_likelihood(theta: &[f64], y: &[f64]) -> f64 {
    let s = theta[2];
    if s <= 0.0 {
        return f64::NEG_INFINITY;
    }
    (0..2)
        .map(|j| {
            let z = (y[j] - theta[j]) / s;
            -0.5 * z * z - s.ln() - 0.5 * LN_2PI
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use sbi_core::RngKey;

    #[test]
    fn likelihood_at_origin() {
        let m = gaussian_model();
        let ll = m.log_likelihood.unwrap()(&[0.0, 0.0, 1.0], &[0.0, 0.0]);
        assert!((ll + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn prior_names_mirror_the_listing() {
        let m = gaussian_model();
        let names: Vec<_> = m.prior.layout().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["mean", "scale"]);
    }

    #[test]
    fn simulated_mean_is_zero() {
        let m = gaussian_model();
        let theta = m.prior.sample(RngKey::new(1), 100_000).unwrap();
        let y = m.simulate(RngKey::new(2), &theta).unwrap();
        for j in 0..2 {
            let mean = sbi_core::stats::mean(&y.column_values(j));
            assert!(mean.abs() < 0.02, "column {j}: {mean}");
        }
    }
}
