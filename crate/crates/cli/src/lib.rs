//! Pipeline front end for the `sbi` binary: simulate, fit, sample, run whole
//! experiments from a TOML document and emit plot-ready CSVs.

pub mod commands;
pub mod config;
pub mod plotdata;
pub mod run;

use sbi_core::Error;

pub use commands::{cmd_fit, cmd_sample, cmd_simulate, parse_observable};
pub use config::{ExperimentConfig, Method};
pub use plotdata::{cmd_plotdata, PlotKind};
pub use run::{cmd_run, run_experiment};

/// 2 for anything the caller can fix (usage, config, bad inputs, missing
/// files), 3 when the computation itself failed.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Contract(_) | Error::Parse(_) | Error::Io(_) => 2,
        Error::Numeric(_) | Error::Budget(_) => 3,
    }
}
