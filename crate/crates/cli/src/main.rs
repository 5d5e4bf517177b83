use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use qprobe::harness::{self, OutputFormat, RunResult, Scenario, ScenarioKind};
use qprobe::{Error, Result};

#[derive(Parser)]
#[command(name = "qprobe", version, about = "Run indirect-measurement scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its record.
    Run {
        config: PathBuf,
        /// Output directory (default: config `output_path`, then $QPROBE_OUT_DIR, then ./out).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Certify a decoupling_check scenario and print the report.
    CheckDecoupling { config: PathBuf },
    /// Run a tomography scenario and print the estimate.
    Tomography { config: PathBuf },
    /// Parse a config and print it with defaults filled in.
    Validate { config: PathBuf },
}

fn load_kind(path: &Path, kind: ScenarioKind) -> Result<Scenario> {
    let sc = harness::load_scenario(path)?;
    if sc.kind != kind {
        return Err(Error::Config {
            path: "kind".into(),
            message: format!("this subcommand needs kind `{}`", serde_json::to_value(kind)?.as_str().unwrap_or_default()),
        });
    }
    Ok(sc)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out, format, seed } => {
            let mut sc = harness::load_scenario(&config)?;
            if let Some(seed) = seed {
                sc.seed = seed;
            }
            let record = harness::run(&sc)?;
            let format = match format {
                Format::Csv => OutputFormat::Csv,
                Format::Json => OutputFormat::Json,
            };
            let dir = harness::resolve_output_dir(out.as_deref(), &sc);
            let path = harness::emit(&record, format, &dir)?;
            println!("{}", path.display());
        }
        Command::CheckDecoupling { config } => {
            let record = harness::run(&load_kind(&config, ScenarioKind::DecouplingCheck)?)?;
            if let RunResult::Decoupling(outcome) = &record.result {
                print_json(outcome)?;
            }
        }
        Command::Tomography { config } => {
            let record = harness::run(&load_kind(&config, ScenarioKind::Tomography)?)?;
            if let RunResult::Tomography(outcome) = &record.result {
                print_json(outcome)?;
            }
        }
        Command::Validate { config } => print_json(&harness::load_scenario(&config)?)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
