//! Rejection ABC with hard or kernel-weighted acceptance.

use log::debug;
use sbi_core::{Error, Result, RngKey, ThetaBatch};
use serde::{Deserialize, Serialize};

use crate::kernels::KernelSpec;
use crate::AbcProblem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RejectionConfig {
    /// Simulations per batch.
    pub batch_size: usize,
    /// Simulations before the acceptance rate is checked against `min_rate`.
    pub min_trials: usize,
    pub min_rate: f64,
}

impl Default for RejectionConfig {
    fn default() -> Self {
        RejectionConfig {
            batch_size: 1000,
            min_trials: 1_000_000,
            min_rate: 1e-6,
        }
    }
}

/// Draw θ from the prior and simulate until `n_accept` draws pass the
/// kernel's acceptance test. Batch `b` uses `key.fold_in(b)`.
pub fn rejection_abc(
    problem: &AbcProblem,
    key: RngKey,
    n_accept: usize,
    kernel: &KernelSpec,
    cfg: &RejectionConfig,
) -> Result<ThetaBatch> {
    if !(kernel.epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be > 0, got {}", kernel.epsilon)));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let s_obs = problem.observed_summary()?;
    let mut accepted: Option<ThetaBatch> = None;
    let mut n_acc = 0usize;
    let mut n_sims = 0usize;
    let mut batch = 0u64;
    while n_acc < n_accept {
        let kb = key.fold_in(batch);
        let theta = problem.prior.sample(kb.fold_in(0), cfg.batch_size)?;
        let d = problem.distances(kb.fold_in(1), &theta, &s_obs)?;
        let mut rng = kb.fold_in(2).rng();
        let keep: Vec<usize> = (0..d.len()).filter(|&i| kernel.accept(d[i], &mut rng)).collect();
        let keep = &keep[..keep.len().min(n_accept - n_acc)];
        n_acc += keep.len();
        n_sims += cfg.batch_size;
        if !keep.is_empty() {
            let part = theta.select_rows(keep);
            accepted = Some(match accepted {
                None => part,
                Some(prev) => ThetaBatch::concat_rows(&prev, &part)?,
            });
        }
        let rate = n_acc as f64 / n_sims as f64;
        if n_acc < n_accept && n_sims >= cfg.min_trials && rate < cfg.min_rate {
            return Err(Error::Budget(format!(
                "rejection ABC accepted {n_acc} of {n_sims} simulations (rate {rate:.3e})"
            )));
        }
        batch += 1;
    }
    debug!("rejection ABC: {n_acc} accepted from {n_sims} simulations");
    match accepted {
        Some(a) => Ok(a),
        None => problem.prior.sample(key, 0),
    }
}
