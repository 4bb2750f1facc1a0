//! Conditional density estimators with exact log-densities.

pub mod maf;
pub mod mdn;
