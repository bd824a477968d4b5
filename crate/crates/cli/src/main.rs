mod evaluate;
mod serve;
mod simulate;
mod train;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Parser, Subcommand, ValueEnum};
use headway_core::io::load_scenario;
use headway_core::sim::{ComplianceModel, SimScenario};

/// Bus holding control: simulate, train, evaluate and serve recommendations.
#[derive(Debug, Parser)]
#[command(name = "headway", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run seeded replications under one or more holding policies.
    Simulate(simulate::Args),
    /// Train a DQN holding policy and compare it with the baselines on held-out seeds.
    Train(train::Args),
    /// Compare base and pilot periods from observed event logs.
    Evaluate(evaluate::Args),
    /// Run the decision support HTTP service.
    Serve(serve::ServeArgs),
    /// Replay a prediction feed offline and print the table after every batch.
    Replay(serve::ReplayArgs),
    /// Write the built-in bunching scenario to a directory.
    InitScenario(InitArgs),
}

#[derive(Debug, clap::Args)]
struct InitArgs {
    /// Target directory; created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ComplianceArg {
    /// Use the scenario's own compliance model.
    Scenario,
    Full,
    /// Executed hold uniform in [0.5, 1.0] of the instructed hold.
    Partial,
}

impl ComplianceArg {
    pub fn apply(self, sc: SimScenario) -> SimScenario {
        match self {
            ComplianceArg::Scenario => sc,
            ComplianceArg::Full => sc.with_compliance(ComplianceModel::FULL),
            ComplianceArg::Partial => sc.with_compliance(ComplianceModel::PARTIAL),
        }
    }
}

/// Bad input or invocation; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Usage(String);

pub fn usage(e: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow::Error::new(Usage(format!("{:#}", e.into())))
}

pub fn require_file(path: &Path, what: &str) -> anyhow::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(anyhow!("{what} file not found: {}", path.display())))
    }
}

pub fn scenario_at(path: &Path) -> anyhow::Result<SimScenario> {
    require_file(path, "scenario")?;
    load_scenario(path).map_err(usage)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate::run(a),
        Command::Train(a) => train::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Serve(a) => serve::serve(a),
        Command::Replay(a) => serve::replay(a),
        Command::InitScenario(a) => {
            let path = headway_core::io::write_scenario(&a.out, &headway_core::scenarios::bunching())?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<Usage>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
