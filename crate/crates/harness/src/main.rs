use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vrlm_core::engine;
use vrlm_harness::{parse_config, HarnessError, Status};

#[derive(Parser)]
#[command(
    name = "vrlm",
    version,
    about = "Decentralized variance-reduced minimax simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single configuration.
    Run { config: PathBuf },
    /// Run every point of the config's [[sweep]] grid.
    Sweep { config: PathBuf },
    /// Check a config and print the resolved constants.
    Validate { config: PathBuf },
    /// Print the theory step sizes for the given constants.
    Steps {
        #[arg(value_name = "L")]
        l: f64,
        mu: f64,
        rho: f64,
        /// Use the STORM schedule for noise level SIGMA and target EPS.
        #[arg(long, num_args = 2, value_names = ["SIGMA", "EPS"])]
        storm: Option<Vec<f64>>,
    },
}

fn execute(cmd: Command) -> Result<Status, HarnessError> {
    match cmd {
        Command::Run { config } => {
            let set = vrlm_harness::run(&parse_config(&config)?)?;
            for o in &set.outcomes {
                if let Some(e) = &o.error {
                    eprintln!("seed {}: {e}", o.seed);
                }
            }
            Ok(set.status())
        }
        Command::Sweep { config } => {
            let rows = vrlm_harness::run_sweep(&parse_config(&config)?)?;
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            eprintln!("{} runs, {failed} failed", rows.len());
            Ok(Status::Ok)
        }
        Command::Validate { config } => {
            let (_, plans) = vrlm_harness::validate(&config)?;
            let resolved: Vec<_> = plans.iter().map(|p| &p.resolved).collect();
            println!(
                "{}",
                serde_json::to_string_pretty(&resolved).expect("serializable")
            );
            Ok(Status::Ok)
        }
        Command::Steps { l, mu, rho, storm } => {
            let theory = match storm.as_deref() {
                Some(&[sigma, eps]) => engine::theory_steps_storm(l, mu, rho, sigma, eps)?,
                _ => engine::theory_steps_spider(l, mu, rho)?,
            };
            println!(
                "{}",
                serde_json::to_string_pretty(&theory).expect("serializable")
            );
            Ok(Status::Ok)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Usage errors exit with 1 so that 2 stays reserved for divergence.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(status) => ExitCode::from(status.exit_code() as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
