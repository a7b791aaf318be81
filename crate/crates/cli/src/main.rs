use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hiersim::{execute_command, Command, Verb, SEED_ENV};

#[derive(Parser)]
#[command(
    name = "hiersim",
    version,
    about = "Run multi-tier adaptation scenarios"
)]
struct Cli {
    #[command(subcommand)]
    verb: VerbArgs,
}

#[derive(Subcommand)]
enum VerbArgs {
    /// Parse and check a scenario file.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run one scenario and write trace.csv, trace.jsonl and summary.json.
    Run(RunArgs),
    /// Run without MAPE, with MAPE, and with MAPE plus learning, on one seed.
    Compare(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override a field, e.g. --set goal.sla_response_time=0.9 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let informational = !e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if informational { 0 } else { 1 });
        }
    };
    let (verb, scenario_path, output_dir, overrides) = match cli.verb {
        VerbArgs::Validate { scenario } => (Verb::Validate, scenario, None, Vec::new()),
        VerbArgs::Run(a) => (Verb::Run, a.scenario, Some(a.out), a.overrides),
        VerbArgs::Compare(a) => (Verb::Compare, a.scenario, Some(a.out), a.overrides),
    };
    let cmd = Command {
        verb,
        scenario_path,
        output_dir,
        overrides,
        seed_override: std::env::var(SEED_ENV).ok(),
    };
    match execute_command(&cmd) {
        Ok(message) => {
            println!("{message}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
