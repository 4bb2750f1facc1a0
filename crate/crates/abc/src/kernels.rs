//! Smoothing kernels `K_ε(u) = (1/ε) K(u/ε)` on summary distances.

use std::f64::consts::PI;

use rand::Rng;
use sbi_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    /// Uniform on distances in `[0, ε]`; acceptance is the hard rule `d < ε`.
    #[default]
    Indicator,
    Gaussian,
    Epanechnikov,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub epsilon: f64,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Config(format!("kernel epsilon must be > 0, got {epsilon}")));
        }
        Ok(KernelSpec { kind, epsilon })
    }

    /// Unit-bandwidth profile `K(v)`.
    fn profile(kind: KernelKind, v: f64) -> f64 {
        match kind {
            KernelKind::Indicator => {
                if (0.0..=1.0).contains(&v) {
                    1.0
                } else {
                    0.0
                }
            }
            KernelKind::Gaussian => (-0.5 * v * v).exp() / (2.0 * PI).sqrt(),
            KernelKind::Epanechnikov => {
                if v.abs() <= 1.0 {
                    0.75 * (1.0 - v * v)
                } else {
                    0.0
                }
            }
        }
    }

    /// `K_ε(d) / K_ε(0)`, the probability of accepting a draw at distance `d`.
    pub fn accept_prob(&self, d: f64) -> f64 {
        if self.epsilon == f64::INFINITY {
            return 1.0;
        }
        match self.kind {
            KernelKind::Indicator => {
                if d < self.epsilon {
                    1.0
                } else {
                    0.0
                }
            }
            k => Self::profile(k, d / self.epsilon) / Self::profile(k, 0.0),
        }
    }

    /// Accept a draw at distance `d`; the hard indicator rule consumes no
    /// randomness.
    pub fn accept<R: Rng + ?Sized>(&self, d: f64, rng: &mut R) -> bool {
        match self.kind {
            KernelKind::Indicator => self.accept_prob(d) == 1.0,
            _ => rng.random::<f64>() < self.accept_prob(d),
        }
    }
}

/// `(1/ε) K(u/ε)`.
pub fn kernel_eval(k: &KernelSpec, u: f64) -> f64 {
    KernelSpec::profile(k.kind, u / k.epsilon) / k.epsilon
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> (f64, f64) {
        // Composite Simpson for ∫f and ∫u f.
        let h = (hi - lo) / n as f64;
        let (mut a, mut b) = (0.0, 0.0);
        for i in 0..=n {
            let u = lo + h * i as f64;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            a += w * f(u);
            b += w * u * f(u);
        }
        (a * h / 3.0, b * h / 3.0)
    }

    #[test]
    fn kernels_integrate_to_one() {
        let eps = 0.7;
        let g = KernelSpec::new(KernelKind::Gaussian, eps).unwrap();
        let (m, first) = integrate(|u| kernel_eval(&g, u), -12.0 * eps, 12.0 * eps, 20_000);
        assert!((m - 1.0).abs() < 1e-6 && first.abs() < 1e-9, "{m} {first}");
        let e = KernelSpec::new(KernelKind::Epanechnikov, eps).unwrap();
        let (m, first) = integrate(|u| kernel_eval(&e, u), -eps, eps, 20_000);
        assert!((m - 1.0).abs() < 1e-6 && first.abs() < 1e-9, "{m} {first}");
        // Open the interval by a hair so Simpson never samples the jumps.
        let i = KernelSpec::new(KernelKind::Indicator, eps).unwrap();
        let (m, _) = integrate(|u| kernel_eval(&i, u), 1e-12, eps - 1e-12, 20_000);
        assert!((m - 1.0).abs() < 1e-6, "{m}");
    }

    #[test]
    fn plug_in_values() {
        let g = KernelSpec::new(KernelKind::Gaussian, 0.5).unwrap();
        assert!((kernel_eval(&g, 0.0) - 1.0 / (0.5 * (2.0 * PI).sqrt())).abs() < 1e-15);
        let i = KernelSpec::new(KernelKind::Indicator, 0.5).unwrap();
        assert_eq!(kernel_eval(&i, 0.75), 0.0);
        assert!(kernel_eval(&g, 0.3) >= 0.0);
    }

    #[test]
    fn acceptance_probabilities() {
        let i = KernelSpec::new(KernelKind::Indicator, 1.0).unwrap();
        assert_eq!(i.accept_prob(0.999), 1.0);
        assert_eq!(i.accept_prob(1.0), 0.0);
        let e = KernelSpec::new(KernelKind::Epanechnikov, 2.0).unwrap();
        assert!((e.accept_prob(1.0) - 0.75).abs() < 1e-15);
        let inf = KernelSpec::new(KernelKind::Gaussian, f64::INFINITY).unwrap();
        assert_eq!(inf.accept_prob(1e300), 1.0);
        assert!(KernelSpec::new(KernelKind::Gaussian, 0.0).is_err());
    }
}
