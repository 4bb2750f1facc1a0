use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sbi_cli::{cmd_fit, cmd_plotdata, cmd_run, cmd_sample, cmd_simulate, exit_code, PlotKind};
use sbi_core::Result;
use sbi_engines::EngineKind;

#[derive(Parser)]
#[command(name = "sbi", version, about = "Simulation-based inference pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw (θ, y) pairs from a model's prior and simulator.
    Simulate {
        #[arg(long)]
        model: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit an engine's surrogate on a simulated data set.
    Fit {
        /// nle, npe, fmpe or nre
        #[arg(long)]
        engine: String,
        #[arg(long)]
        model: String,
        #[arg(long)]
        data: PathBuf,
        /// TOML with engine settings, bare or under [engine].
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_params: PathBuf,
        #[arg(long)]
        out_losses: PathBuf,
    },
    /// Draw from the fitted posterior at an observation.
    Sample {
        #[arg(long)]
        engine: String,
        #[arg(long)]
        params: PathBuf,
        /// Comma-separated values or a file holding them.
        #[arg(long, allow_hyphen_values = true)]
        observable: String,
        #[arg(long, default_value_t = 1000)]
        n_samples: usize,
        /// Overrides the sampler's chain count (MCMC engines only).
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Chains CSV; the diagnostics sidecar goes next to it as .json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a whole experiment from a TOML document.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to <config stem>.out next to the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Turn a posterior CSV into tidy plot data.
    Plotdata {
        #[arg(long)]
        posterior: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
        #[arg(long)]
        out: PathBuf,
        /// Histogram and grid bins, rank bins, or ESS curve points.
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { model, n, seed, out } => cmd_simulate(&model, n, seed, &out),
        Command::Fit {
            engine,
            model,
            data,
            config,
            seed,
            out_params,
            out_losses,
        } => cmd_fit(
            EngineKind::parse(&engine)?,
            &model,
            &data,
            config.as_deref(),
            seed,
            &out_params,
            &out_losses,
        ),
        Command::Sample {
            engine,
            params,
            observable,
            n_samples,
            chains,
            seed,
            out,
        } => cmd_sample(EngineKind::parse(&engine)?, &params, &observable, n_samples, chains, seed, &out),
        Command::Run { config, out_dir } => cmd_run(&config, out_dir.as_deref()).map(|dir| {
            log::info!("outputs in {}", dir.display());
        }),
        Command::Plotdata { posterior, kind, out, bins } => cmd_plotdata(&posterior, kind, &out, bins),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with 2 on usage errors.
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
