//! The `simulate`, `fit` and `sample` subcommands.

use std::fs;
use std::path::Path;

use log::info;
use sbi_core::{Dataset, Error, Result, RngKey};
use sbi_engines::{Engine, EngineConfig, EngineKind};
use sbi_ndnet::{LossProfile, NetParams};
use sbi_models::SolarDynamoConfig;
use serde_json::json;

use crate::config::{engine_config_from_toml, resolve_model};

pub fn simulate_dataset(model: &str, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("--n must be >= 1".into()));
    }
    let m = resolve_model(model, None)?;
    let key = RngKey::new(seed);
    let theta = m.prior.sample(key.fold_in(0), n)?;
    let y = m.simulate(key.fold_in(1), &theta)?;
    Dataset::new(y, theta)
}

pub fn cmd_simulate(model: &str, n: usize, seed: u64, out: &Path) -> Result<()> {
    let data = simulate_dataset(model, n, seed)?;
    data.write_csv(fs::File::create(out)?)?;
    info!("wrote {} simulations to {}", n, out.display());
    Ok(())
}

/// Metadata stored in the `spec` field of a params document.
pub fn params_spec(model: &str, solar: Option<&SolarDynamoConfig>, engine: &EngineConfig, seed: u64, n_train: usize) -> serde_json::Value {
    let mut engine = engine.clone();
    engine.estimator = Some(engine.estimator());
    let mut spec = json!({
        "model": model,
        "engine": engine,
        "seed": seed,
        "n_train": n_train,
    });
    if let Some(s) = solar {
        spec["solar"] = json!(s);
    }
    spec
}

pub fn write_losses(profiles: &[LossProfile], out: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(fs::File::create(out)?);
    let with_round = profiles.len() > 1;
    if with_round {
        w.write_record(["round", "train", "val"])?;
    } else {
        w.write_record(["train", "val"])?;
    }
    for (r, p) in profiles.iter().enumerate() {
        for (t, v) in p.train.iter().zip(&p.val) {
            let mut rec = Vec::with_capacity(3);
            if with_round {
                rec.push(r.to_string());
            }
            rec.push(sbi_core::data::format_float(*t));
            rec.push(sbi_core::data::format_float(*v));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_fit(
    kind: EngineKind,
    model: &str,
    data_path: &Path,
    config_path: Option<&Path>,
    seed: u64,
    out_params: &Path,
    out_losses: &Path,
) -> Result<()> {
    let text = match config_path {
        Some(p) => Some(fs::read_to_string(p)?),
        None => None,
    };
    let config = engine_config_from_toml(text.as_deref(), kind)?;
    let m = resolve_model(model, None)?;
    let data = Dataset::read_csv(fs::File::open(data_path)?)?;
    let engine = Engine::new(config.clone(), m.prior.clone(), m.simulator.clone())?;
    let (params, profile) = engine.fit(RngKey::new(seed), &data, None, &config.fit)?;
    let spec = params_spec(model, None, &config, seed, data.n());
    fs::write(out_params, params.to_json(spec)? + "\n")?;
    write_losses(&[profile], out_losses)?;
    Ok(())
}

/// An observable given inline (`"1.0,-0.5"`) or as a file of numbers
/// separated by commas or whitespace.
pub fn parse_observable(arg: &str) -> Result<Vec<f64>> {
    let text = if Path::new(arg).is_file() {
        fs::read_to_string(arg)?
    } else {
        arg.to_string()
    };
    let values = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("observable entry '{s}' is not a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(Error::Config("observable is empty".into()));
    }
    Ok(values)
}

/// Rebuild the engine that produced a params document.
pub fn engine_from_document(text: &str) -> Result<(Engine, NetParams, serde_json::Value)> {
    let (spec, params) = NetParams::from_json(text)?;
    let model = spec["model"]
        .as_str()
        .ok_or_else(|| Error::Parse("params document lacks spec.model".into()))?;
    let solar: Option<SolarDynamoConfig> = match spec.get("solar") {
        Some(v) => Some(serde_json::from_value(v.clone()).map_err(|e| Error::Parse(e.to_string()))?),
        None => None,
    };
    let config: EngineConfig =
        serde_json::from_value(spec["engine"].clone()).map_err(|e| Error::Parse(format!("spec.engine: {e}")))?;
    let m = resolve_model(model, solar.as_ref())?;
    let engine = Engine::new(config, m.prior, m.simulator)?;
    Ok((engine, params, spec))
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_sample(
    kind: EngineKind,
    params_path: &Path,
    observable: &str,
    n_samples: usize,
    chains: Option<usize>,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let (engine, params, spec) = engine_from_document(&fs::read_to_string(params_path)?)?;
    if engine.kind() != kind {
        return Err(Error::Config(format!(
            "params were fitted by {}, not {}",
            engine.kind().name(),
            kind.name()
        )));
    }
    let obs = parse_observable(observable)?;
    let mut sampler = engine.config.sampler.clone();
    if let Some(c) = chains {
        sampler.n_chains = c;
    }
    let result = engine.sample_posterior(RngKey::new(seed), &params, &obs, n_samples, Some(&sampler))?;
    let provenance = json!({
        "fit": spec,
        "sample": { "seed": seed, "n_samples": n_samples, "sampler": sampler },
    });
    result.save(out, &out.with_extension("json"), &provenance)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observable_parsing() {
        assert_eq!(parse_observable("1.5,-2").unwrap(), vec![1.5, -2.0]);
        assert_eq!(parse_observable(" 1 2\n3 ").unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(matches!(parse_observable("1,abc"), Err(Error::Config(_))));
        assert!(matches!(parse_observable(""), Err(Error::Config(_))));
    }

    #[test]
    fn simulated_dataset_layout() {
        let d = simulate_dataset("slcp", 5, 1).unwrap();
        assert_eq!(d.y.shape(), &[5, 8]);
        assert_eq!(d.theta.total_dim(), 5);
        assert_eq!(d, simulate_dataset("slcp", 5, 1).unwrap());
        assert!(simulate_dataset("nope", 5, 1).is_err());
    }
}
