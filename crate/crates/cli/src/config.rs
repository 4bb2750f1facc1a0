//! Experiment documents (TOML) and their resolution into runnable pieces.

use std::fs;
use std::path::Path;

use sbi_abc::{KernelKind, RegressionSummaryConfig, RejectionConfig, SmcConfig};
use sbi_core::{Error, Result, RngKey};
use sbi_engines::{EngineConfig, EngineKind};
use sbi_models::{by_name, solar_dynamo_model, BenchmarkModel, SolarDynamoConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Neural,
    SmcAbc,
    RejectionAbc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequentialConfig {
    pub n_rounds: usize,
    pub n_per_round: usize,
}

impl Default for SequentialConfig {
    fn default() -> Self {
        SequentialConfig {
            n_rounds: 1,
            n_per_round: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosteriorConfig {
    /// Draws per chain for MCMC engines, total draws otherwise.
    pub n_samples: usize,
}

impl Default for PosteriorConfig {
    fn default() -> Self {
        PosteriorConfig { n_samples: 1000 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SummaryChoice {
    #[default]
    Identity,
    Regression(RegressionSummaryConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RejectionSettings {
    pub epsilon: f64,
    pub n_accept: usize,
    pub kernel: KernelKind,
    pub batch_size: usize,
    pub min_trials: usize,
    pub min_rate: f64,
}

impl Default for RejectionSettings {
    fn default() -> Self {
        let d = RejectionConfig::default();
        RejectionSettings {
            epsilon: 0.5,
            n_accept: 1000,
            kernel: KernelKind::Indicator,
            batch_size: d.batch_size,
            min_trials: d.min_trials,
            min_rate: d.min_rate,
        }
    }
}

impl RejectionSettings {
    pub fn budget(&self) -> RejectionConfig {
        RejectionConfig {
            batch_size: self.batch_size,
            min_trials: self.min_trials,
            min_rate: self.min_rate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbcSettings {
    pub summary: SummaryChoice,
    pub distance: String,
    pub smc: SmcConfig,
    pub rejection: RejectionSettings,
}

impl Default for AbcSettings {
    fn default() -> Self {
        AbcSettings {
            summary: SummaryChoice::Identity,
            distance: "euclidean".into(),
            smc: SmcConfig::default(),
            rejection: RejectionSettings::default(),
        }
    }
}

/// One declarative experiment. Every section falls back to the owning
/// module's defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: String,
    /// Defaults to the model's stored observation, then to a simulation at
    /// `true_theta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observable: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solar: Option<SolarDynamoConfig>,
    #[serde(default)]
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engine: Option<EngineConfig>,
    #[serde(default)]
    pub sequential: SequentialConfig,
    #[serde(default)]
    pub posterior: PosteriorConfig,
    #[serde(default)]
    pub abc: AbcSettings,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Fill every optional section so the document records exactly what ran.
    pub fn resolved(&self) -> Result<Self> {
        let mut c = self.clone();
        if c.model == "solar_dynamo" && c.solar.is_none() {
            c.solar = Some(SolarDynamoConfig::default());
        }
        match c.method {
            Method::Neural => {
                let mut e = c
                    .engine
                    .take()
                    .ok_or_else(|| Error::Config("method 'neural' needs an [engine] section".into()))?;
                e.estimator = Some(e.estimator());
                c.engine = Some(e);
            }
            _ => c.engine = None,
        }
        Ok(c)
    }

    pub fn model(&self) -> Result<BenchmarkModel> {
        resolve_model(&self.model, self.solar.as_ref())
    }

    /// The observation to condition on.
    pub fn observable(&self, model: &BenchmarkModel, key: RngKey) -> Result<Vec<f64>> {
        if let Some(o) = &self.observable {
            return Ok(o.clone());
        }
        if let Some(t) = &self.true_theta {
            let flat = sbi_core::Tensor::matrix(1, t.len(), t.clone());
            let theta = sbi_core::ThetaBatch::unflatten(&flat, &model.prior.layout())?;
            return Ok(model.simulate(key, &theta)?.row(0).to_vec());
        }
        model.observation.clone().ok_or_else(|| {
            Error::Config(format!(
                "model '{}' has no stored observation; set `observable` or `true_theta`",
                model.name
            ))
        })
    }

    pub fn to_json(&self) -> Result<serde_json::Value> {
        serde_json::to_value(self).map_err(|e| Error::Parse(e.to_string()))
    }
}

pub fn resolve_model(name: &str, solar: Option<&SolarDynamoConfig>) -> Result<BenchmarkModel> {
    match (name, solar) {
        ("solar_dynamo", Some(cfg)) => Ok(solar_dynamo_model(cfg)),
        _ => by_name(name),
    }
}

/// Engine settings for `fit`: either a bare engine table or a document with
/// an `[engine]` section. The command-line kind wins when the file has none
/// and must agree otherwise.
pub fn engine_config_from_toml(text: Option<&str>, kind: EngineKind) -> Result<EngineConfig> {
    let Some(text) = text else {
        return Ok(EngineConfig::new(kind));
    };
    let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let mut table = match doc.remove("engine") {
        Some(toml::Value::Table(t)) => t,
        Some(_) => return Err(Error::Config("`engine` must be a table".into())),
        None => doc,
    };
    match table.get("kind") {
        None => {
            table.insert("kind".into(), toml::Value::String(kind.name().into()));
        }
        Some(toml::Value::String(k)) if EngineKind::parse(k)? == kind => {}
        Some(other) => {
            return Err(Error::Config(format!(
                "config engine kind {other} disagrees with --engine {}",
                kind.name()
            )))
        }
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_takes_module_defaults() {
        let c = ExperimentConfig::from_toml("model = \"slcp\"\n[engine]\nkind = \"nle\"\n").unwrap();
        assert_eq!(c.sequential, SequentialConfig::default());
        let r = c.resolved().unwrap();
        let e = r.engine.unwrap();
        assert_eq!(e.estimator, Some(EngineKind::Nle.default_estimator()));
        assert_eq!(e.fit.batch_size, 128);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            ExperimentConfig::from_toml("model = \"slcp\"\nrounds = 3\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn nested_sections_override() {
        let text = r#"
            seed = 7
            model = "gaussian"
            method = "smc_abc"
            observable = [1.0, 0.5]
            [abc.smc]
            n_particles = 200
            eps_decay = 0.7
            [abc.smc.transition]
            kind = "identity"
            [abc.summary]
            kind = "regression"
            n_sims = 500
        "#;
        let c = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(c.abc.smc.n_particles, 200);
        assert_eq!(c.abc.smc.transition, sbi_abc::Transition::Identity);
        assert!(matches!(c.abc.summary, SummaryChoice::Regression(ref r) if r.n_sims == 500));
        // The resolved form survives a JSON round trip.
        let j = c.resolved().unwrap().to_json().unwrap();
        let back: ExperimentConfig = serde_json::from_value(j).unwrap();
        assert_eq!(back, c.resolved().unwrap());
    }

    #[test]
    fn fit_config_accepts_bare_or_sectioned_tables() {
        let a = engine_config_from_toml(Some("[fit]\nbatch_size = 64\n"), EngineKind::Nle).unwrap();
        let b = engine_config_from_toml(Some("[engine.fit]\nbatch_size = 64\n"), EngineKind::Nle).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fit.batch_size, 64);
        assert!(engine_config_from_toml(Some("kind = \"npe\"\n"), EngineKind::Nle).is_err());
        assert!(engine_config_from_toml(Some("[fit\n"), EngineKind::Nle).is_err());
    }

    #[test]
    fn true_theta_fallback_simulates() {
        let c = ExperimentConfig::from_toml("model = \"gaussian\"\nmethod = \"smc_abc\"\ntrue_theta = [0.5, -0.5, 1.0]\n").unwrap();
        let m = c.model().unwrap();
        let a = c.observable(&m, RngKey::new(1)).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a, c.observable(&m, RngKey::new(1)).unwrap());
        let none = ExperimentConfig::from_toml("model = \"gaussian\"\nmethod = \"smc_abc\"\n").unwrap();
        assert!(none.observable(&m, RngKey::new(1)).is_err());
    }
}
