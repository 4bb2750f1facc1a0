//! MCMC samplers over arbitrary log-densities and rank-based convergence
//! diagnostics.

pub mod chains;
pub mod density;
pub mod diagnostics;
pub mod samplers;

pub use chains::ChainSet;
pub use density::{FnDensity, LogDensity};
pub use diagnostics::{
    ess_bulk, ess_tail, rank_histograms, split_rhat, Diagnostics, REL_ESS_THRESHOLD, RHAT_THRESHOLD,
};
pub use samplers::{sample, SamplerConfig, SamplerKind};
