use std::path::PathBuf;
use std::process::ExitCode;

use breakcoag_cli::{parse_config, run_scenario, verify_scenario, CliError};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "breakcoag", version, about = "Coagulation with collision-induced breakage: run and verify scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a scenario and run the experiments it lists.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// `key.path=value`, applied before validation; repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate the hypotheses of a scenario without integrating it.
    Verify {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out, overrides } => {
            let cfg = parse_config(&config, &overrides)?;
            let summary = run_scenario(&cfg, &out)?;
            for l in &summary.lines {
                let verdict = match l.passed {
                    Some(true) => "PASS",
                    Some(false) => "FAIL",
                    None => "INFO",
                };
                println!("{}: {verdict} {}", l.experiment, l.detail);
            }
            let failed = summary.failures();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Assertion(failed.join(", ")))
            }
        }
        Command::Verify { config, out, overrides } => {
            let cfg = parse_config(&config, &overrides)?;
            let report = verify_scenario(&cfg, out.as_deref())?;
            let text = serde_json::to_string_pretty(&breakcoag_cli::output::stamped(&cfg.hash, &report))
                .expect("report serializes");
            println!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("breakcoag: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
