//! Random-walk Metropolis, MALA and coordinate-wise slice sampling.
//!
//! Chain `c` draws its randomness from `fold_in(key, c)` only, so chains
//! can run in parallel and in any order.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sbi_core::{Error, Result, RngKey, Tensor};
use serde::{Deserialize, Serialize};

use crate::chains::ChainSet;
use crate::density::LogDensity;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Rmh,
    Mala,
    #[default]
    Slice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_draws: usize,
    /// RMH proposal std (default `2.38/√dim`) or MALA step `τ` in
    /// `x' = x + τ∇log p + √(2τ)ξ` (default `0.1/√dim`).
    pub step_size: Option<f64>,
    pub slice_width: f64,
    /// Maximum number of width steps when stepping out the slice.
    pub max_step_out: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            kind: SamplerKind::Slice,
            n_chains: 4,
            n_warmup: 500,
            n_draws: 1000,
            step_size: None,
            slice_width: 1.0,
            max_step_out: 10,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_draws == 0 {
            return Err(Error::Config("n_draws must be >= 1".into()));
        }
        if let Some(s) = self.step_size {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("step_size {s} must be finite and >= 0")));
            }
        }
        if !(self.slice_width > 0.0 && self.slice_width.is_finite()) {
            return Err(Error::Config("slice_width must be positive".into()));
        }
        Ok(())
    }
}

/// Run one chain per row of `init`. Warmup draws are discarded.
pub fn sample(target: &dyn LogDensity, init: &Tensor, key: RngKey, cfg: &SamplerConfig) -> Result<ChainSet> {
    cfg.validate()?;
    let dim = target.dim();
    if init.cols() != dim || init.rows() == 0 {
        return Err(Error::Contract(format!(
            "init must be n_chains x {dim}, got {:?}",
            init.shape()
        )));
    }
    let draws = (0..init.rows())
        .into_par_iter()
        .map(|c| run_chain(target, init.row(c), key.fold_in(c as u64), cfg))
        .collect::<Result<Vec<_>>>()?;
    ChainSet::unnamed(draws)
}

fn run_chain(target: &dyn LogDensity, x0: &[f64], key: RngKey, cfg: &SamplerConfig) -> Result<Tensor> {
    let lp0 = target.log_density(x0);
    if !lp0.is_finite() || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract(format!(
            "log density at init {x0:?} is {lp0}; MCMC needs a finite start"
        )));
    }
    let dim = x0.len();
    let mut rng = key.rng();
    let mut state = State {
        x: x0.to_vec(),
        lp: lp0,
        grad: None,
    };
    let total = cfg.n_warmup + cfg.n_draws;
    let mut out = Vec::with_capacity(cfg.n_draws * dim);
    let mut accepted = 0usize;
    for it in 0..total {
        let moved = match cfg.kind {
            SamplerKind::Rmh => {
                let step = cfg.step_size.unwrap_or(2.38 / (dim as f64).sqrt());
                rmh_step(target, &mut state, &mut rng, step)
            }
            SamplerKind::Mala => {
                let tau = cfg.step_size.unwrap_or(0.1 / (dim as f64).sqrt());
                mala_step(target, &mut state, &mut rng, tau)
            }
            SamplerKind::Slice => {
                slice_sweep(target, &mut state, &mut rng, cfg.slice_width, cfg.max_step_out);
                true
            }
        };
        if it >= cfg.n_warmup {
            accepted += moved as usize;
            out.extend_from_slice(&state.x);
        }
    }
    log::debug!(
        "{:?} chain acceptance rate {:.3}",
        cfg.kind,
        accepted as f64 / cfg.n_draws as f64
    );
    Ok(Tensor::matrix(cfg.n_draws, dim, out))
}

struct State {
    x: Vec<f64>,
    lp: f64,
    grad: Option<Vec<f64>>,
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn rmh_step(target: &dyn LogDensity, s: &mut State, rng: &mut impl Rng, step: f64) -> bool {
    let prop: Vec<f64> = s.x.iter().map(|v| v + step * normal(rng)).collect();
    let lp = target.log_density(&prop);
    let log_u = rng.random::<f64>().ln();
    if lp.is_finite() && log_u < lp - s.lp {
        s.x = prop;
        s.lp = lp;
        true
    } else {
        false
    }
}

/// `log q(to | from)` up to a constant for the Langevin proposal.
fn langevin_log_q(to: &[f64], from: &[f64], grad_from: &[f64], tau: f64) -> f64 {
    to.iter()
        .zip(from)
        .zip(grad_from)
        .map(|((t, f), g)| {
            let r = t - f - tau * g;
            -r * r / (4.0 * tau)
        })
        .sum()
}

fn mala_step(target: &dyn LogDensity, s: &mut State, rng: &mut impl Rng, tau: f64) -> bool {
    let g = s.grad.get_or_insert_with(|| target.grad(&s.x)).clone();
    let noise = (2.0 * tau).sqrt();
    let prop: Vec<f64> = s
        .x
        .iter()
        .zip(&g)
        .map(|(v, gi)| v + tau * gi + noise * normal(rng))
        .collect();
    let log_u = rng.random::<f64>().ln();
    let lp = target.log_density(&prop);
    if !lp.is_finite() {
        return false;
    }
    let g_prop = target.grad(&prop);
    if g_prop.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let log_alpha =
        lp - s.lp + langevin_log_q(&s.x, &prop, &g_prop, tau) - langevin_log_q(&prop, &s.x, &g, tau);
    if log_u < log_alpha {
        s.x = prop;
        s.lp = lp;
        s.grad = Some(g_prop);
        true
    } else {
        false
    }
}

const MAX_SHRINK: usize = 200;

/// One sweep of univariate slice updates with stepping out and
/// shrinkage, one coordinate at a time.
fn slice_sweep(target: &dyn LogDensity, s: &mut State, rng: &mut impl Rng, w: f64, m: usize) {
    let mut x = s.x.clone();
    for j in 0..x.len() {
        let x0 = x[j];
        let level = s.lp + rng.random::<f64>().ln();
        let lp_at = |v: f64, x: &mut Vec<f64>| {
            x[j] = v;
            target.log_density(x)
        };
        let mut left = x0 - w * rng.random::<f64>();
        let mut right = left + w;
        let mut steps_left = (m as f64 * rng.random::<f64>()).floor() as usize;
        let mut steps_right = m.saturating_sub(1).saturating_sub(steps_left);
        while steps_left > 0 && lp_at(left, &mut x) > level {
            left -= w;
            steps_left -= 1;
        }
        while steps_right > 0 && lp_at(right, &mut x) > level {
            right += w;
            steps_right -= 1;
        }
        let mut moved = false;
        for _ in 0..MAX_SHRINK {
            let cand = left + rng.random::<f64>() * (right - left);
            let lp = lp_at(cand, &mut x);
            if lp > level {
                s.lp = lp;
                moved = true;
                break;
            }
            if cand < x0 {
                left = cand;
            } else {
                right = cand;
            }
        }
        if !moved {
            x[j] = x0;
        }
    }
    s.x = x;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::FnDensity;

    fn std_normal() -> FnDensity<impl Fn(&[f64]) -> f64 + Sync> {
        FnDensity::new(1, |x: &[f64]| -0.5 * x[0] * x[0])
    }

    #[test]
    fn zero_step_rmh_stays_put() {
        let cfg = SamplerConfig {
            kind: SamplerKind::Rmh,
            step_size: Some(0.0),
            n_warmup: 0,
            n_draws: 50,
            ..Default::default()
        };
        let init = Tensor::matrix(2, 1, vec![0.3, -1.2]);
        let cs = sample(&std_normal(), &init, RngKey::new(1), &cfg).unwrap();
        assert!(cs.draws[0].data().iter().all(|v| *v == 0.3));
        assert!(cs.draws[1].data().iter().all(|v| *v == -1.2));
    }

    #[test]
    fn non_finite_init_rejected() {
        let d = FnDensity::new(1, |x: &[f64]| if x[0] > 0.0 { 0.0 } else { f64::NEG_INFINITY });
        let cfg = SamplerConfig::default();
        let err = sample(&d, &Tensor::matrix(1, 1, vec![-1.0]), RngKey::new(0), &cfg);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn chain_draws_do_not_depend_on_other_chains() {
        let cfg = SamplerConfig {
            n_warmup: 10,
            n_draws: 20,
            ..Default::default()
        };
        let a = sample(&std_normal(), &Tensor::matrix(2, 1, vec![0.0, 1.0]), RngKey::new(4), &cfg).unwrap();
        let b = sample(&std_normal(), &Tensor::matrix(3, 1, vec![0.0, 1.0, 5.0]), RngKey::new(4), &cfg).unwrap();
        assert_eq!(a.draws[0], b.draws[0]);
        assert_eq!(a.draws[1], b.draws[1]);
    }

    #[test]
    fn slice_respects_bounded_support() {
        // Uniform on (0, 1): every draw must stay inside.
        let d = FnDensity::new(1, |x: &[f64]| if x[0] > 0.0 && x[0] < 1.0 { 0.0 } else { f64::NEG_INFINITY });
        let cfg = SamplerConfig {
            n_draws: 500,
            ..Default::default()
        };
        let cs = sample(&d, &Tensor::matrix(1, 1, vec![0.5]), RngKey::new(2), &cfg).unwrap();
        assert!(cs.draws[0].data().iter().all(|v| *v > 0.0 && *v < 1.0));
        let m = cs.mean(0);
        assert!((m - 0.5).abs() < 0.05, "mean {m}");
    }
}
