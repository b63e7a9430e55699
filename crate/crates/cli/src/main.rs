use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use log::{error, info};

use visco_core::runner::{self, write_outputs, RunOutput, Scenario};

#[derive(Parser, Debug)]
#[command(name = "visco", version, about = "Viscoelastic plant, identification and force-control scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write SVG slices of the final field.
    #[arg(long)]
    svg: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Online parameter identification against a simulated plant.
    Identify(Common),
    /// Admittance outer loop with boundary control of the error field.
    DualLoop {
        #[command(flatten)]
        common: Common,
        /// Run even if the gains fail the passivity test.
        #[arg(long)]
        force: bool,
    },
    /// Unforced plant against the analytic eigen-series solution.
    OracleCheck(Common),
    /// Gain kernel boundary row and residual check.
    Kernel(Common),
    /// Frequency samples of the admittance filter.
    Passivity(Common),
}

enum Failure {
    Threshold,
    Config(anyhow::Error),
}

fn load(common: &Common) -> anyhow::Result<(Scenario, String)> {
    Scenario::load(&common.config).with_context(|| format!("loading {}", common.config.display()))
}

fn execute(command: &Command) -> Result<RunOutput, Failure> {
    let (common, kind) = match command {
        Command::Identify(c) | Command::OracleCheck(c) | Command::Kernel(c) | Command::Passivity(c) => (c, command),
        Command::DualLoop { common, .. } => (common, command),
    };
    let (scenario, text) = load(common).map_err(Failure::Config)?;
    let seed = common.seed.unwrap_or(scenario.seed);
    info!("scenario '{}' seed {seed}", scenario.name);
    let output = match kind {
        Command::Identify(_) => runner::run_identify(&scenario, seed, common.svg),
        Command::DualLoop { force, .. } => runner::run_dual_loop(&scenario, *force, common.svg),
        Command::OracleCheck(_) => runner::run_oracle_check(&scenario, common.svg),
        Command::Kernel(_) => runner::run_kernel(&scenario),
        Command::Passivity(_) => runner::run_passivity(&scenario),
    }
    .map_err(|e| Failure::Config(e.into()))?;

    let files = write_outputs(&common.out, &output, &text, seed).map_err(|e| Failure::Config(e.into()))?;
    for f in &files {
        info!("wrote {}", f.display());
    }
    for check in &output.report.checks {
        println!(
            "{:<24} {:>14.6e} {:?} {:<12.6e} {}",
            check.name,
            check.value,
            check.comparison,
            check.threshold,
            if check.passed { "ok" } else { "FAILED" }
        );
    }
    for flag in &output.report.flags {
        println!("flag: {flag}");
    }
    if output.report.passed() {
        Ok(output)
    } else {
        Err(Failure::Threshold)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(_) => ExitCode::SUCCESS,
        Err(Failure::Threshold) => {
            error!("one or more thresholds not met");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            error!("{e:#}");
            ExitCode::from(2)
        }
    }
}
