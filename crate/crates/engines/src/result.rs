//! Posterior draws with their diagnostics and a JSON sidecar.

use std::fs;
use std::path::Path;

use sbi_core::{Error, Result, Tensor};
use sbi_mcmc::{ChainSet, Diagnostics};
use serde::Serialize;

use crate::EngineKind;

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceResult {
    pub kind: EngineKind,
    /// Prior layout: `(name, width)` per named parameter.
    pub layout: Vec<(String, usize)>,
    pub posterior: ChainSet,
    pub observed: Vec<f64>,
    pub diagnostics: Diagnostics,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    engine: EngineKind,
    layout: &'a [(String, usize)],
    n_chains: usize,
    n_draws: usize,
    observed: &'a [f64],
    diagnostics: &'a Diagnostics,
    config: &'a serde_json::Value,
}

impl InferenceResult {
    /// Top-level parameter names, as declared in the prior.
    pub fn names(&self) -> Vec<&str> {
        self.layout.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Pooled draws of one named parameter (rows = draws).
    pub fn draws(&self, name: &str) -> Result<Tensor> {
        let mut start = 0;
        for (n, w) in &self.layout {
            if n == name {
                return Ok(self.posterior.pooled().slice_cols(start, start + w));
            }
            start += w;
        }
        Err(Error::Contract(format!("no parameter named '{name}'")))
    }

    /// Write the chains as CSV and a metadata document next to them.
    /// `config` is embedded verbatim.
    pub fn save(&self, csv_path: &Path, meta_path: &Path, config: &serde_json::Value) -> Result<()> {
        self.posterior.save(csv_path)?;
        fs::write(meta_path, self.metadata(config)? + "\n")?;
        Ok(())
    }

    pub fn metadata(&self, config: &serde_json::Value) -> Result<String> {
        let doc = Sidecar {
            engine: self.kind,
            layout: &self.layout,
            n_chains: self.posterior.n_chains(),
            n_draws: self.posterior.n_draws(),
            observed: &self.observed,
            diagnostics: &self.diagnostics,
            config,
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Parse(e.to_string()))
    }
}
