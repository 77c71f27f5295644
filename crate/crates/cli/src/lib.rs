//! Front end for `etbr-core`: configs in, traces, reports and figure data out.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use etbr_core::Scenario;

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "etbr", version, about = "Design, simulation and bit-rate analysis for event-triggered quantized control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    #[value(name = "inst_finite", alias = "inst-finite")]
    InstFinite,
    #[value(name = "inst_bounded", alias = "inst-bounded")]
    InstBounded,
    #[value(name = "non_inst_bounded", alias = "non-inst-bounded")]
    NonInstBounded,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::InstFinite => Scenario::InstFinite,
            ScenarioArg::InstBounded => Scenario::InstBounded,
            ScenarioArg::NonInstBounded => Scenario::NonInstBounded,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Derive the design constants and check the assumptions.
    Design {
        config: PathBuf,
        /// Print a JSON report instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Simulate one run and write samples.csv, events.csv and manifest.json.
    Simulate {
        config: PathBuf,
        #[arg(long, value_enum)]
        scenario: Option<ScenarioArg>,
        #[arg(long)]
        pbar: Option<u32>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// CSV with header `k,pk` of per-event bits-per-axis requests.
        #[arg(long)]
        pk_override: Option<PathBuf>,
    },
    /// Data-rate bounds and realized bits for a simulated trace.
    Rates {
        trace_dir: PathBuf,
        config: PathBuf,
        /// Defaults to `<trace_dir>/rates.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 401)]
        grid: usize,
    },
    /// Write the data series of a reference figure from the bundled configs.
    Reproduce {
        #[arg(value_enum)]
        figure: commands::reproduce::Figure,
        #[arg(long, default_value = "figures")]
        out: PathBuf,
        #[arg(long)]
        step: Option<f64>,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Design { config, json } => commands::design::run(&config, json),
        Command::Simulate { config, scenario, pbar, horizon, step, out, pk_override } => {
            let args = commands::simulate::SimulateArgs {
                config,
                scenario: scenario.map(Into::into),
                pbar,
                horizon,
                step,
                out,
                pk_override,
            };
            commands::simulate::run(&args).map(|_| ())
        }
        Command::Rates { trace_dir, config, out, grid } => {
            let args = commands::rates::RatesArgs { trace_dir, config, out, grid };
            commands::rates::run(&args).map(|_| ())
        }
        Command::Reproduce { figure, out, step } => commands::reproduce::run(figure, &out, step).map(|_| ()),
    }
}
