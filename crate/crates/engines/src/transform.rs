//! Coordinate-wise maps from ℝ onto a prior's support.
//!
//! Intervals use a scaled logistic, the half-line uses `exp`, and the real
//! line is left alone. `log_jacobian` is `Σ log |dθ/dz|`.

use sbi_core::{Error, Result, Support};

#[derive(Clone, Debug, PartialEq)]
pub struct Unconstrain {
    supports: Vec<Support>,
}

fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

impl Unconstrain {
    pub fn new(supports: Vec<Support>) -> Result<Self> {
        if let Some(j) = supports.iter().position(|s| matches!(s, Support::Discrete(_))) {
            return Err(Error::Contract(format!(
                "coordinate {j} is discrete; MCMC needs continuous parameters"
            )));
        }
        Ok(Unconstrain { supports })
    }

    pub fn dim(&self) -> usize {
        self.supports.len()
    }

    /// `θ(z)`.
    pub fn forward(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.supports)
            .map(|(&z, s)| match *s {
                Support::Interval(lo, hi) => lo + (hi - lo) * log_sigmoid(z).exp(),
                Support::NonNegative => z.exp(),
                _ => z,
            })
            .collect()
    }

    /// `z(θ)`; boundary values map to ±∞.
    pub fn inverse(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(&self.supports)
            .map(|(&t, s)| match *s {
                Support::Interval(lo, hi) => {
                    let u = (t - lo) / (hi - lo);
                    u.ln() - (1.0 - u).ln()
                }
                Support::NonNegative => t.ln(),
                _ => t,
            })
            .collect()
    }

    pub fn log_jacobian(&self, z: &[f64]) -> f64 {
        z.iter()
            .zip(&self.supports)
            .map(|(&z, s)| match *s {
                Support::Interval(lo, hi) => (hi - lo).ln() + log_sigmoid(z) + log_sigmoid(-z),
                Support::NonNegative => z,
                _ => 0.0,
            })
            .sum()
    }
}
