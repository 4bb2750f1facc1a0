//! `run`: a whole experiment from one config document.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use sbi_abc::{
    euclidean, identity, rejection_abc, smc_abc, train_regression, AbcProblem, DistanceFn, KernelSpec, SummaryFn,
};
use sbi_core::data::format_float;
use sbi_core::{Error, Result, RngKey, ThetaBatch};
use sbi_engines::Engine;
use sbi_models::BenchmarkModel;
use serde_json::json;

use crate::commands::{params_spec, write_losses};
use crate::config::{ExperimentConfig, Method, SummaryChoice};

/// Files written by a run, relative to its output directory.
pub const RESOLVED_CONFIG: &str = "config.json";
pub const DATA: &str = "data.csv";
pub const PARAMS: &str = "params.json";
pub const LOSSES: &str = "losses.csv";
pub const POSTERIOR: &str = "posterior.csv";
pub const POSTERIOR_META: &str = "posterior.json";
pub const PARTICLES: &str = "particles.csv";
pub const EPSILON_TRACE: &str = "epsilon_trace.csv";
pub const ABC_META: &str = "abc.json";

/// Default output directory: the config file name without extension, next
/// to the config.
pub fn default_out_dir(config_path: &Path) -> PathBuf {
    let stem = config_path.file_stem().map(|s| s.to_owned()).unwrap_or_else(|| "run".into());
    config_path.with_file_name(stem).with_extension("out")
}

pub fn cmd_run(config_path: &Path, out_dir: Option<&Path>) -> Result<PathBuf> {
    let cfg = ExperimentConfig::load(config_path)?;
    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| default_out_dir(config_path));
    run_experiment(&cfg, &dir)?;
    Ok(dir)
}

/// Keys: `fold_in(0)` drives the inference itself, `fold_in(1)` posterior
/// sampling, `fold_in(2)` summary training and `fold_in(3)` a simulated
/// observation.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let cfg = cfg.resolved()?;
    let model = cfg.model()?;
    let root = RngKey::new(cfg.seed);
    let obs = cfg.observable(&model, root.fold_in(3))?;
    if obs.len() != model.y_dim {
        return Err(Error::Config(format!(
            "observable has {} entries, model '{}' produces {}",
            obs.len(),
            model.name,
            model.y_dim
        )));
    }
    fs::create_dir_all(dir)?;
    let resolved = cfg.to_json()?;
    write_json(&dir.join(RESOLVED_CONFIG), &resolved)?;
    match cfg.method {
        Method::Neural => run_neural(&cfg, &model, &obs, root, dir, &resolved),
        Method::SmcAbc | Method::RejectionAbc => run_abc(&cfg, &model, &obs, root, dir, &resolved),
    }
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn run_neural(
    cfg: &ExperimentConfig,
    model: &BenchmarkModel,
    obs: &[f64],
    root: RngKey,
    dir: &Path,
    resolved: &serde_json::Value,
) -> Result<()> {
    let ec = cfg.engine.clone().expect("resolved neural config has an engine");
    let engine = Engine::new(ec.clone(), model.prior.clone(), model.simulator.clone())?;
    let (params, data, profiles) =
        engine.sequential_run(root.fold_in(0), obs, cfg.sequential.n_rounds, cfg.sequential.n_per_round)?;
    data.write_csv(fs::File::create(dir.join(DATA))?)?;
    let mut spec = params_spec(&cfg.model, cfg.solar.as_ref(), &ec, cfg.seed, data.n());
    spec["experiment"] = resolved.clone();
    fs::write(dir.join(PARAMS), params.to_json(spec)? + "\n")?;
    write_losses(&profiles, &dir.join(LOSSES))?;
    let result = engine.sample_posterior(root.fold_in(1), &params, obs, cfg.posterior.n_samples, None)?;
    result.save(&dir.join(POSTERIOR), &dir.join(POSTERIOR_META), resolved)?;
    info!("posterior written to {}", dir.join(POSTERIOR).display());
    Ok(())
}

fn summary_for(cfg: &ExperimentConfig, model: &BenchmarkModel, key: RngKey) -> Result<SummaryFn> {
    match &cfg.abc.summary {
        SummaryChoice::Identity => Ok(identity()),
        SummaryChoice::Regression(rc) => {
            let (s, profile) = train_regression(&model.prior, &model.simulator, key, rc)?;
            info!("regression summary trained for {} epochs", profile.epochs());
            Ok(s.into_fn())
        }
    }
}

fn distance_by_name(name: &str) -> Result<DistanceFn> {
    match name {
        "euclidean" => Ok(euclidean()),
        _ => Err(Error::Config(format!("unknown distance '{name}'; expected euclidean"))),
    }
}

fn write_particles(path: &Path, names: &[String], thetas: &ThetaBatch, weights: Option<&[f64]>) -> Result<()> {
    let flat = thetas.flatten();
    let mut w = csv::Writer::from_writer(fs::File::create(path)?);
    let mut header = names.to_vec();
    if weights.is_some() {
        header.push("weight".into());
    }
    w.write_record(&header)?;
    for i in 0..flat.rows() {
        let mut rec: Vec<String> = flat.row(i).iter().map(|v| format_float(*v)).collect();
        if let Some(ws) = weights {
            rec.push(format_float(ws[i]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn run_abc(
    cfg: &ExperimentConfig,
    model: &BenchmarkModel,
    obs: &[f64],
    root: RngKey,
    dir: &Path,
    resolved: &serde_json::Value,
) -> Result<()> {
    let problem = AbcProblem::new(model.prior.clone(), model.simulator.clone(), obs.to_vec())
        .with_summary(summary_for(cfg, model, root.fold_in(2))?)
        .with_distance(distance_by_name(&cfg.abc.distance)?);
    let names = model.prior.coordinate_names();
    let meta = if cfg.method == Method::SmcAbc {
        let (particles, trace) = smc_abc(&problem, root.fold_in(0), &cfg.abc.smc)?;
        write_particles(&dir.join(PARTICLES), &names, &particles.thetas, Some(&particles.weights))?;
        trace.write_csv(fs::File::create(dir.join(EPSILON_TRACE))?)?;
        json!({
            "method": "smc_abc",
            "observed": obs,
            "final_epsilon": particles.epsilon,
            "rounds": particles.round,
            "stopped_early": trace.stopped_early,
            "weighted_mean": particles.weighted_mean(),
            "n_simulations": trace.rounds.iter().map(|r| r.n_simulations).sum::<usize>(),
            "config": resolved,
        })
    } else {
        let r = &cfg.abc.rejection;
        let kernel = KernelSpec::new(r.kernel, r.epsilon)?;
        let draws = rejection_abc(&problem, root.fold_in(0), r.n_accept, &kernel, &r.budget())?;
        write_particles(&dir.join(PARTICLES), &names, &draws, None)?;
        json!({
            "method": "rejection_abc",
            "observed": obs,
            "epsilon": r.epsilon,
            "n_accept": draws.n(),
            "config": resolved,
        })
    };
    write_json(&dir.join(ABC_META), &meta)
}
