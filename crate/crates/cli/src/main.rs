use std::path::PathBuf;
use std::process::ExitCode;

use casf_cli::config::{DataSection, RunConfig};
use casf_cli::error::CliError;
use casf_cli::run::{emit, run, Command};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "casf", version, about = "Conditional average structural functions with proxy controls")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Fit on a cross section and evaluate the configured targets.
    Estimate(Args),
    /// Build proxies from panel lags and leads, then estimate.
    PanelEstimate(Args),
    /// Monte Carlo study on a simulated design.
    Simulate(Args),
    /// Closed-form checks on random discrete models.
    OracleSuite(Args),
    /// Uniform bootstrap bands over a treatment grid.
    Bands(Args),
}

#[derive(clap::Args)]
struct Args {
    /// TOML run configuration (or a JSON config echoed by a report).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV; overrides data.path.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Column role, e.g. `--role price=x:1`; repeatable, overrides data.roles.
    #[arg(long = "role", value_name = "COL=ROLE")]
    roles: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON report path; overrides output.report.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Plot-data CSV path; overrides output.csv.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn resolve(args: Args) -> Result<RunConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::parse("", false)?,
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(path) = args.data {
        match &mut config.data {
            Some(d) => d.path = path,
            None => {
                config.data = Some(DataSection {
                    path,
                    roles: Default::default(),
                })
            }
        }
    }
    if !args.roles.is_empty() {
        let data = config
            .data
            .as_mut()
            .ok_or_else(|| CliError::Usage("--role given without a data file".into()))?;
        for r in &args.roles {
            let (col, role) = r
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--role expects COL=ROLE, got {r:?}")))?;
            data.roles.insert(col.to_string(), role.to_string());
        }
    }
    if args.out.is_some() {
        config.output.report = args.out;
    }
    if args.csv.is_some() {
        config.output.csv = args.csv;
    }
    Ok(config)
}

fn execute(command: Command, args: Args) -> Result<(), CliError> {
    let config = resolve(args)?;
    let output = run(command, &config)?;
    emit(&config, &output)?;
    match output.failed {
        Some(msg) => Err(CliError::Failed(msg)),
        None => Ok(()),
    }
}

fn fail(err: &CliError) -> ExitCode {
    let record = serde_json::to_string(&err.record()).unwrap_or_else(|_| err.to_string());
    eprintln!("{record}");
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return fail(&CliError::Usage(e.to_string()));
        }
    };
    let (command, args) = match cli.command {
        Sub::Estimate(a) => (Command::Estimate, a),
        Sub::PanelEstimate(a) => (Command::PanelEstimate, a),
        Sub::Simulate(a) => (Command::Simulate, a),
        Sub::OracleSuite(a) => (Command::OracleSuite, a),
        Sub::Bands(a) => (Command::Bands, a),
    };
    match execute(command, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
