//! Sequential Monte Carlo ABC.
//!
//! Particles start as prior draws with uniform weights and ε¹ equal to the
//! smallest initial distance. Each round perturbs every particle with the
//! transition kernel until its simulated summary lands within ε^r, reweights
//! by `π(θ) / Σ_m w_m K(θ | θ_m)`, resamples when the effective sample size
//! falls below `ess_threshold · N`, and shrinks ε geometrically.
//!
//! A particle that exhausts its tries keeps its previous value and weight.
//! If it has never been accepted in any round it is still a raw prior draw
//! and gets weight zero. Moved and kept particles are normalized as two
//! groups; see [`combine_groups`].

use std::io::Write;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use sbi_core::distributions::{log_sum_exp, LN_2PI};
use sbi_core::{Error, Result, RngKey, Tensor, ThetaBatch};
use serde::{Deserialize, Serialize};

use crate::kernels::{KernelKind, KernelSpec};
use crate::AbcProblem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transition {
    /// Gaussian random walk with covariance `scale ×` the weighted particle
    /// covariance.
    RandomWalk { scale: f64 },
    /// Particles stay put; weights carry over.
    Identity,
    /// Fresh independent prior draws.
    Prior,
}

impl Default for Transition {
    fn default() -> Self {
        Transition::RandomWalk { scale: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmcConfig {
    pub n_particles: usize,
    pub n_rounds: usize,
    pub eps_decay: f64,
    pub ess_threshold: f64,
    pub max_tries_per_particle: usize,
    pub kernel: KernelKind,
    pub transition: Transition,
    /// Overrides ε¹ = min_n d(s_n⁰, s_obs).
    pub initial_epsilon: Option<f64>,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig {
            n_particles: 1000,
            n_rounds: 10,
            eps_decay: 0.8,
            ess_threshold: 0.5,
            max_tries_per_particle: 1000,
            kernel: KernelKind::Indicator,
            transition: Transition::default(),
            initial_epsilon: None,
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_particles == 0 || self.n_rounds == 0 || self.max_tries_per_particle == 0 {
            return bad("n_particles, n_rounds and max_tries_per_particle must be >= 1".into());
        }
        if !(self.eps_decay > 0.0 && self.eps_decay < 1.0) {
            return bad(format!("eps_decay must be in (0, 1), got {}", self.eps_decay));
        }
        if !(self.ess_threshold > 0.0 && self.ess_threshold <= 1.0) {
            return bad(format!("ess_threshold must be in (0, 1], got {}", self.ess_threshold));
        }
        if let Transition::RandomWalk { scale } = self.transition {
            if !(scale > 0.0 && scale.is_finite()) {
                return bad(format!("random-walk scale must be > 0, got {scale}"));
            }
        }
        if let Some(e) = self.initial_epsilon {
            if !(e > 0.0) {
                return bad(format!("initial_epsilon must be > 0, got {e}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSet {
    pub thetas: ThetaBatch,
    pub weights: Vec<f64>,
    pub epsilon: f64,
    /// Number of completed rounds; 0 for the prior population.
    pub round: usize,
}

impl ParticleSet {
    /// Weighted mean of each flattened coordinate.
    pub fn weighted_mean(&self) -> Vec<f64> {
        let flat = self.thetas.flatten();
        (0..flat.cols())
            .map(|j| (0..flat.rows()).map(|i| self.weights[i] * flat.get(i, j)).sum())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: usize,
    pub epsilon: f64,
    /// Accepted proposals over simulated proposals.
    pub acceptance_rate: f64,
    pub n_simulations: usize,
    pub n_exhausted: usize,
    /// Effective sample size after reweighting, before any resampling.
    pub ess: f64,
    pub resampled: bool,
    /// Sum of the normalized weights at the end of the round.
    pub weight_sum: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SmcTrace {
    pub rounds: Vec<RoundStats>,
    /// True when a round ended with every particle exhausted.
    pub stopped_early: bool,
}

impl SmcTrace {
    pub fn epsilons(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.epsilon).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["round", "epsilon", "acceptance_rate", "n_simulations", "n_exhausted", "ess", "resampled", "weight_sum"])?;
        for r in &self.rounds {
            out.write_record([
                r.round.to_string(),
                sbi_core::data::format_float(r.epsilon),
                sbi_core::data::format_float(r.acceptance_rate),
                r.n_simulations.to_string(),
                r.n_exhausted.to_string(),
                sbi_core::data::format_float(r.ess),
                r.resampled.to_string(),
                sbi_core::data::format_float(r.weight_sum),
            ])?;
        }
        Ok(out.flush()?)
    }
}

/// `(Σw)² / Σw²`.
pub fn ess_of_weights(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|v| v * v).sum();
    if s2 == 0.0 {
        0.0
    } else {
        s * s / s2
    }
}

/// Systematic resampling: one uniform offset, `N` evenly spaced pointers
/// into the cumulative weights.
pub fn systematic_resample(w: &[f64], key: RngKey) -> Vec<usize> {
    let n = w.len();
    if n == 0 {
        return Vec::new();
    }
    let total: f64 = w.iter().sum();
    let u0 = key.uniform() / n as f64;
    let mut idx = Vec::with_capacity(n);
    let mut cum = w[0] / total;
    let mut j = 0;
    for i in 0..n {
        let u = u0 + i as f64 / n as f64;
        while u > cum && j + 1 < n {
            j += 1;
            cum += w[j] / total;
        }
        idx.push(j);
    }
    idx
}

/// Gaussian random walk `θ' = θ + L z` with `L Lᵀ = scale · Cov_w`.
struct RandomWalk {
    chol: DMatrix<f64>,
    log_norm: f64,
}

impl RandomWalk {
    fn fit(particles: &Tensor, w: &[f64], scale: f64) -> Result<Self> {
        let (n, d) = (particles.rows(), particles.cols());
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (j, m) in mean.iter_mut().enumerate() {
                *m += w[i] * particles.get(i, j);
            }
        }
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for i in 0..n {
            let r = DVector::from_iterator(d, (0..d).map(|j| particles.get(i, j) - mean[j]));
            cov += w[i] * &r * r.transpose();
        }
        cov *= scale;
        let base = (0..d).map(|j| cov[(j, j)].abs()).fold(0.0, f64::max).max(1e-300);
        let mut jitter = 0.0;
        for _ in 0..12 {
            let mut c = cov.clone();
            for j in 0..d {
                c[(j, j)] += jitter;
            }
            if let Some(ch) = c.cholesky() {
                let chol = ch.l();
                let log_det: f64 = (0..d).map(|j| chol[(j, j)].ln()).sum();
                let log_norm = -log_det - 0.5 * d as f64 * LN_2PI;
                return Ok(RandomWalk { chol, log_norm });
            }
            jitter = if jitter == 0.0 { 1e-10 * base } else { jitter * 10.0 };
        }
        Err(Error::Numeric("particle covariance is not positive definite".into()))
    }

    fn propose<R: Rng + ?Sized>(&self, from: &[f64], rng: &mut R) -> Vec<f64> {
        let z = DVector::from_iterator(from.len(), (0..from.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let step = &self.chol * z;
        from.iter().zip(step.iter()).map(|(a, b)| a + b).collect()
    }

    fn log_density(&self, x: &[f64], from: &[f64]) -> f64 {
        let d = x.len();
        // Forward substitution for L v = x − from.
        let mut v = vec![0.0; d];
        for i in 0..d {
            let mut acc = x[i] - from[i];
            for k in 0..i {
                acc -= self.chol[(i, k)] * v[k];
            }
            v[i] = acc / self.chol[(i, i)];
        }
        self.log_norm - 0.5 * v.iter().map(|a| a * a).sum::<f64>()
    }
}

/// Run SMC-ABC. Round `r` uses `key.fold_in(r)`; round 0 is the prior
/// population.
pub fn smc_abc(problem: &AbcProblem, key: RngKey, cfg: &SmcConfig) -> Result<(ParticleSet, SmcTrace)> {
    cfg.validate()?;
    let n = cfg.n_particles;
    let layout = problem.prior.layout();
    let s_obs = problem.observed_summary()?;

    let k0 = key.fold_in(0);
    let theta0 = problem.prior.sample(k0.fold_in(0), n)?;
    let d0 = problem.distances(k0.fold_in(1), &theta0, &s_obs)?;
    let eps1 = match cfg.initial_epsilon {
        Some(e) => e,
        None => d0.iter().cloned().fold(f64::INFINITY, f64::min),
    };
    if !(eps1 > 0.0) {
        return Err(Error::Numeric(format!("initial epsilon {eps1} is not positive")));
    }
    let mut particles = theta0.flatten();
    let dim = particles.cols();
    let mut weights = vec![1.0 / n as f64; n];
    // Whether each particle has ever met a round's threshold. A prior draw
    // that never did carries no ABC support, so it gets zero weight if it
    // is kept after exhausting its tries.
    let mut matched = vec![false; n];
    let mut trace = SmcTrace::default();
    let mut done = 0;
    let mut last_eps = f64::INFINITY;

    for r in 1..=cfg.n_rounds {
        let eps = eps1 * cfg.eps_decay.powi(r as i32 - 1);
        let kernel = KernelSpec { kind: cfg.kernel, epsilon: eps };
        let kr = key.fold_in(r as u64);
        let walk = match cfg.transition {
            Transition::RandomWalk { scale } => Some(RandomWalk::fit(&particles, &weights, scale)?),
            _ => None,
        };

        let mut next = particles.clone();
        let mut pending: Vec<usize> = (0..n).collect();
        let mut n_sims = 0usize;
        for attempt in 0..cfg.max_tries_per_particle {
            if pending.is_empty() {
                break;
            }
            let ka = kr.fold_in(attempt as u64);
            let proposals: Vec<Vec<f64>> = match &cfg.transition {
                Transition::RandomWalk { .. } => {
                    let mut rng = ka.fold_in(0).rng();
                    let w = walk.as_ref().expect("walk fitted");
                    pending.iter().map(|&i| w.propose(particles.row(i), &mut rng)).collect()
                }
                Transition::Identity => pending.iter().map(|&i| particles.row(i).to_vec()).collect(),
                Transition::Prior => {
                    let draws = problem.prior.sample(ka.fold_in(0), pending.len())?.flatten();
                    (0..pending.len()).map(|k| draws.row(k).to_vec()).collect()
                }
            };
            // Proposals outside the prior support use up a try without a
            // simulation.
            let live: Vec<usize> = (0..pending.len())
                .filter(|&k| problem.prior.log_prob_flat(&proposals[k]).is_finite())
                .collect();
            let mut accepted = vec![false; pending.len()];
            if !live.is_empty() {
                let rows: Vec<f64> = live.iter().flat_map(|&k| proposals[k].iter().cloned()).collect();
                let theta = problem.prior.unflatten(&Tensor::matrix(live.len(), dim, rows))?;
                let d = problem.distances(ka.fold_in(1), &theta, &s_obs)?;
                n_sims += live.len();
                let mut rng = ka.fold_in(2).rng();
                for (slot, &k) in live.iter().enumerate() {
                    if kernel.accept(d[slot], &mut rng) {
                        accepted[k] = true;
                        matched[pending[k]] = true;
                        next.row_mut(pending[k]).copy_from_slice(&proposals[k]);
                    }
                }
            }
            pending = pending
                .iter()
                .zip(&accepted)
                .filter(|(_, a)| !**a)
                .map(|(&i, _)| i)
                .collect();
        }
        let n_exhausted = pending.len();
        let acceptance_rate = if n_sims == 0 { 0.0 } else { (n - n_exhausted) as f64 / n_sims as f64 };
        if n_exhausted == n {
            warn!("SMC-ABC round {r}: all {n} particles exhausted at epsilon {eps:.4e}; stopping early");
            trace.rounds.push(RoundStats {
                round: r,
                epsilon: eps,
                acceptance_rate,
                n_simulations: n_sims,
                n_exhausted,
                ess: ess_of_weights(&weights),
                resampled: false,
                weight_sum: weights.iter().sum(),
            });
            trace.stopped_early = true;
            break;
        }
        if n_exhausted > 0 {
            debug!("SMC-ABC round {r}: {n_exhausted} particles kept their previous value");
        }

        let mut kept = vec![false; n];
        for &i in &pending {
            kept[i] = true;
        }
        let log_prev: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
        let moved_log_w: Vec<f64> = (0..n)
            .map(|i| {
                if kept[i] {
                    return f64::NEG_INFINITY;
                }
                let x = next.row(i);
                match (&cfg.transition, &walk) {
                    (Transition::RandomWalk { .. }, Some(walk)) => {
                        let terms: Vec<f64> = (0..n)
                            .filter(|&m| weights[m] > 0.0)
                            .map(|m| log_prev[m] + walk.log_density(x, particles.row(m)))
                            .collect();
                        problem.prior.log_prob_flat(x) - log_sum_exp(&terms)
                    }
                    // The proposal density is the prior itself.
                    (Transition::Prior, _) => 0.0,
                    _ => log_prev[i],
                }
            })
            .collect();
        let kept_log_w: Vec<f64> = (0..n)
            .map(|i| if kept[i] && matched[i] { log_prev[i] } else { f64::NEG_INFINITY })
            .collect();
        let log_w = combine_groups(&moved_log_w, &kept_log_w, &kept, &matched);
        weights = normalize_log_weights(&log_w)?;
        particles = next;
        let ess = ess_of_weights(&weights);
        let resampled = ess < cfg.ess_threshold * n as f64;
        if resampled {
            let idx = systematic_resample(&weights, kr.fold_in(u64::MAX));
            particles = particles.select_rows(&idx);
            matched = idx.iter().map(|&i| matched[i]).collect();
            weights = vec![1.0 / n as f64; n];
        }
        trace.rounds.push(RoundStats {
            round: r,
            epsilon: eps,
            acceptance_rate,
            n_simulations: n_sims,
            n_exhausted,
            ess,
            resampled,
            weight_sum: weights.iter().sum(),
        });
        debug!("SMC-ABC round {r}: epsilon {eps:.4e}, acceptance {acceptance_rate:.3e}, ESS {ess:.1}");
        done = r;
        last_eps = eps;
    }

    let set = ParticleSet {
        thetas: ThetaBatch::unflatten(&particles, &layout)?,
        weights,
        epsilon: if done == 0 { eps1 } else { last_eps },
        round: done,
    };
    Ok((set, trace))
}

/// Self-normalize the moved and kept particles separately and give each
/// group mass in proportion to its number of matched members. Without
/// exhausted particles this is the plain importance weight.
fn combine_groups(moved: &[f64], kept_w: &[f64], kept: &[bool], matched: &[bool]) -> Vec<f64> {
    let n_moved = (0..kept.len()).filter(|&i| !kept[i]).count() as f64;
    let n_kept = (0..kept.len()).filter(|&i| kept[i] && matched[i]).count() as f64;
    let total = n_moved + n_kept;
    let (lse_m, lse_k) = (log_sum_exp(moved), log_sum_exp(kept_w));
    (0..kept.len())
        .map(|i| {
            let (lw, lse, count) = if kept[i] { (kept_w[i], lse_k, n_kept) } else { (moved[i], lse_m, n_moved) };
            if count == 0.0 || lw == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                lw - lse + (count / total).ln()
            }
        })
        .collect()
}

fn normalize_log_weights(log_w: &[f64]) -> Result<Vec<f64>> {
    let lse = log_sum_exp(log_w);
    if !lse.is_finite() {
        return Err(Error::Numeric("all importance weights vanished".into()));
    }
    Ok(log_w.iter().map(|l| (l - lse).exp()).collect())
}
