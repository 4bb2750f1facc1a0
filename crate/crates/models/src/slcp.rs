//! Simple likelihood, complex posterior: θ ∼ U(−3, 3)⁵ and four iid
//! bivariate normal draws with mean (θ₁, θ₂), scales (θ₃², θ₄²) and
//! correlation tanh(θ₅).

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use sbi_core::distributions::LN_2PI;
use sbi_core::{Distribution, PriorSpec, Tensor};

use crate::BenchmarkModel;

pub const SLCP_OBSERVATION: [f64; 8] = [
    -0.9707123, -2.9461224, -0.4494722, -3.4231849, -0.1328563, -3.3640170, -0.8536759, -2.4271638,
];

struct Params {
    m0: f64,
    m1: f64,
    s0: f64,
    s1: f64,
    r: f64,
}

fn unpack(t: &[f64]) -> Params {
    Params {
        m0: t[0],
        m1: t[1],
        s0: t[2] * t[2],
        s1: t[3] * t[3],
        r: t[4].tanh(),
    }
}

pub fn slcp_model() -> BenchmarkModel {
    let prior = PriorSpec::new(vec![("theta", Distribution::uniform_iid(5, -3.0, 3.0))]).expect("valid prior");
    BenchmarkModel {
        name: "slcp".into(),
        prior,
        simulator: Arc::new(|key, theta| {
            let t = theta.get("theta").expect("theta");
            let mut rng = key.rng();
            let n = theta.n();
            let mut y = Vec::with_capacity(8 * n);
            for i in 0..n {
                let p = unpack(t.row(i));
                for _ in 0..4 {
                    let u0: f64 = rng.sample(StandardNormal);
                    let u1: f64 = rng.sample(StandardNormal);
                    y.push(p.s0 * u0 + p.m0);
                    y.push(p.s1 * (p.r * u0 + (1.0 - p.r * p.r).sqrt() * u1) + p.m1);
                }
            }
            Ok(Tensor::matrix(n, 8, y))
        }),
        y_dim: 8,
        observation: Some(SLCP_OBSERVATION.to_vec()),
        log_likelihood: Some(Arc::new(log_likelihood)),
    }
}

/// Sum of four bivariate normal log-densities.
fn log_likelihood(theta: &[f64], y: &[f64]) -> f64 {
    let p = unpack(theta);
    let one_minus_r2 = 1.0 - p.r * p.r;
    if p.s0 == 0.0 || p.s1 == 0.0 || one_minus_r2 <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let log_norm = -LN_2PI - p.s0.ln() - p.s1.ln() - 0.5 * one_minus_r2.ln();
    (0..4)
        .map(|k| {
            let a = (y[2 * k] - p.m0) / p.s0;
            let b = (y[2 * k + 1] - p.m1) / p.s1;
            log_norm - (a * a - 2.0 * p.r * a * b + b * b) / (2.0 * one_minus_r2)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn likelihood_closed_form_at_unit_scales() {
        let m = slcp_model();
        let ll = m.log_likelihood.unwrap()(&[0.0, 0.0, 1.0, 1.0, 0.0], &[0.0; 8]);
        assert!((ll + 4.0 * LN_2PI).abs() < 1e-12);
    }

    #[test]
    fn likelihood_matches_matrix_form() {
        // Oracle: explicit covariance inverse and determinant.
        let theta = [0.3, -1.1, 1.2, -0.7, 0.8];
        let y = [0.1, -0.5, 1.0, -2.0, 0.4, 0.0, -0.3, -1.4];
        let (s0, s1, r) = (1.44, 0.49, 0.8f64.tanh());
        let (c00, c01, c11) = (s0 * s0, r * s0 * s1, s1 * s1);
        let det = c00 * c11 - c01 * c01;
        let want: f64 = (0..4)
            .map(|k| {
                let (a, b) = (y[2 * k] - 0.3, y[2 * k + 1] + 1.1);
                let q = (c11 * a * a - 2.0 * c01 * a * b + c00 * b * b) / det;
                -0.5 * q - 0.5 * det.ln() - LN_2PI
            })
            .sum();
        let got = slcp_model().log_likelihood.unwrap()(&theta, &y);
        assert!((got - want).abs() < 1e-10);
    }

    #[test]
    fn observation_is_stored_verbatim() {
        assert_eq!(slcp_model().observation.unwrap()[5], -3.3640170);
    }
}
