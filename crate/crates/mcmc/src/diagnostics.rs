//! Rank-normalized split-R̂, bulk and tail effective sample size, and
//! per-chain rank histograms.
//!
//! All statistics are computed from ranks of the pooled draws, so they are
//! invariant to strictly monotone transforms of the parameters.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::chains::ChainSet;

/// Split-R̂ values at or below this are acceptable.
pub const RHAT_THRESHOLD: f64 = 1.05;
/// Relative ESS above this indicates good exploration.
pub const REL_ESS_THRESHOLD: f64 = 0.5;

/// Per-parameter convergence summary. `split_rhat` is `None` when draws
/// are independent samples rather than MCMC chains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_rhat: Option<Vec<f64>>,
    pub ess_bulk: Vec<f64>,
    pub ess_tail: Vec<f64>,
    pub rel_ess: Vec<f64>,
}

impl Diagnostics {
    pub fn compute(cs: &ChainSet) -> Self {
        let mut d = Self::ess_only(cs);
        d.split_rhat = Some(split_rhat(cs));
        d
    }

    pub fn ess_only(cs: &ChainSet) -> Self {
        let total = (cs.n_chains() * cs.n_draws()) as f64;
        let ess_bulk = ess_bulk(cs);
        Diagnostics {
            names: cs.names.clone(),
            split_rhat: None,
            rel_ess: ess_bulk.iter().map(|e| e / total).collect(),
            ess_tail: ess_tail(cs),
            ess_bulk,
        }
    }

    /// `(name, rhat_ok, rel_ess_ok)` per parameter; R̂ is considered fine
    /// when it is not computed.
    pub fn flags(&self) -> Vec<(String, bool, bool)> {
        (0..self.names.len())
            .map(|j| {
                let rhat_ok = self
                    .split_rhat
                    .as_ref()
                    .is_none_or(|r| r[j] <= RHAT_THRESHOLD);
                (self.names[j].clone(), rhat_ok, self.rel_ess[j] >= REL_ESS_THRESHOLD)
            })
            .collect()
    }
}

/// Split every chain into two halves; an odd middle draw is dropped.
fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [c[..h].to_vec(), c[c.len() - h..].to_vec()]
        })
        .collect()
}

/// Fractional ranks of the pooled draws (ties averaged) mapped through
/// `Φ⁻¹((r − 3/8) / (S + 1/4))`.
pub fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let ranks = pooled_ranks(chains);
    let s = chains.iter().map(Vec::len).sum::<usize>() as f64;
    let n = Normal::standard();
    ranks
        .into_iter()
        .map(|c| c.into_iter().map(|r| n.inverse_cdf((r - 0.375) / (s + 0.25))).collect())
        .collect()
}

/// 1-based ranks over all chains, ties sharing their average rank.
fn pooled_ranks(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut flat: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, v)| v.iter().enumerate().map(move |(i, &x)| (x, c, i)))
        .collect();
    flat.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < flat.len() {
        let mut j = i;
        while j + 1 < flat.len() && flat[j + 1].0 == flat[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &(_, c, k) in &flat[i..=j] {
            out[c][k] = avg;
        }
        i = j + 1;
    }
    out
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

/// Classic between/within R̂ on equal-length chains.
pub fn rhat_basic(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| var(c)).collect::<Vec<_>>());
    let b_over_n = if chains.len() > 1 { var(&means) } else { 0.0 };
    if w == 0.0 {
        return f64::INFINITY;
    }
    let var_plus = (n - 1.0) / n * w + b_over_n;
    (var_plus / w).sqrt()
}

/// Rank-normalized split-R̂ per parameter. Constant parameters give `+∞`.
pub fn split_rhat(cs: &ChainSet) -> Vec<f64> {
    (0..cs.dim())
        .map(|j| {
            let halves = split(&cs.param(j));
            if halves[0].len() < 2 {
                return f64::NAN;
            }
            if is_constant(&halves) {
                log::warn!("parameter {} is constant across chains; R-hat is infinite", cs.names[j]);
                return f64::INFINITY;
            }
            rhat_basic(&rank_normalize(&halves))
        })
        .collect()
}

fn is_constant(chains: &[Vec<f64>]) -> bool {
    let first = chains[0][0];
    chains.iter().flatten().all(|v| *v == first)
}

/// Biased autocovariance for lags `0..n`.
fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let c: Vec<f64> = x.iter().map(|v| v - m).collect();
    (0..n)
        .map(|t| c[..n - t].iter().zip(&c[t..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
        .collect()
}

/// Multi-chain ESS with Geyer's initial monotone sequence estimator.
/// Returns `NaN` for constant input.
pub fn ess_basic(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    if n < 4 || is_constant(chains) {
        return f64::NAN;
    }
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(c)).collect();
    let acov_mean: Vec<f64> = (0..n).map(|t| acov.iter().map(|a| a[t]).sum::<f64>() / m as f64).collect();
    let nf = n as f64;
    let w = acov_mean[0] * nf / (nf - 1.0);
    let mut var_plus = w * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += var(&chains.iter().map(|c| mean(c)).collect::<Vec<_>>());
    }
    let rho_at = |t: usize| 1.0 - (w - acov_mean[t]) / var_plus;

    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = rho_at(1);
    rho[1] = rho_odd;
    let mut t = 1;
    while t + 4 < n && rho_even + rho_odd > 0.0 {
        rho_even = rho_at(t + 1);
        rho_odd = rho_at(t + 2);
        if rho_even + rho_odd >= 0.0 {
            rho[t + 1] = rho_even;
            rho[t + 2] = rho_odd;
        }
        t += 2;
    }
    let max_t = t;
    if rho_even > 0.0 {
        rho[max_t + 1] = rho_even;
    }
    // Initial monotone sequence: pair sums may not increase.
    let mut t = 1;
    while t + 2 <= max_t {
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t] {
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0;
            rho[t + 2] = rho[t + 1];
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let tau = (-1.0 + 2.0 * rho[..max_t].iter().sum::<f64>() + rho[max_t + 1]).max(1.0 / total.log10());
    total / tau
}

/// ESS of rank-normalized split chains.
pub fn ess_bulk(cs: &ChainSet) -> Vec<f64> {
    (0..cs.dim())
        .map(|j| {
            let halves = split(&cs.param(j));
            if is_constant(&halves) {
                return f64::NAN;
            }
            ess_basic(&rank_normalize(&halves))
        })
        .collect()
}

/// Minimum ESS of the indicators `x ≤ q₀.₀₅` and `x ≤ q₀.₉₅`.
pub fn ess_tail(cs: &ChainSet) -> Vec<f64> {
    (0..cs.dim())
        .map(|j| {
            let halves = split(&cs.param(j));
            let pooled: Vec<f64> = halves.iter().flatten().copied().collect();
            [0.05, 0.95]
                .iter()
                .map(|&q| {
                    let cut = sbi_core::stats::quantile(&pooled, q);
                    let ind: Vec<Vec<f64>> = halves
                        .iter()
                        .map(|c| c.iter().map(|&v| if v <= cut { 1.0 } else { 0.0 }).collect())
                        .collect();
                    ess_basic(&ind)
                })
                .fold(f64::NAN, f64::min)
        })
        .collect()
}

/// Rank histograms: `out[param][chain][bin]` counts of each chain's draws
/// among the pooled ranks.
pub fn rank_histograms(cs: &ChainSet, bins: usize) -> Vec<Vec<Vec<usize>>> {
    let total = cs.n_chains() * cs.n_draws();
    (0..cs.dim())
        .map(|j| {
            pooled_ranks(&cs.param(j))
                .iter()
                .map(|chain| {
                    let mut h = vec![0usize; bins];
                    for &r in chain {
                        let b = (((r - 1.0) * bins as f64 / total as f64).floor() as usize).min(bins - 1);
                        h[b] += 1;
                    }
                    h
                })
                .collect()
        })
        .collect()
}
