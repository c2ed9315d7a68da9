mod commands;
mod config;
mod error;
mod io;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{Context, Study};
use crate::config::{parse_override, RunConfig};
use crate::error::{CliError, CliResult};

/// Beta autoregressive models: simulation, fitting, change monitoring and forecasting.
#[derive(Debug, Parser)]
#[command(name = "betaar", version)]
struct Cli {
    /// Base seed for all random draws.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads for parallel work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Configuration override `key=value`; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a path and write it as CSV.
    Simulate {
        /// Number of transitions.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fit the model to a CSV series.
    Fit {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Calibrate detection thresholds from a fit.
    Calibrate {
        #[arg(long)]
        fit: Option<PathBuf>,
        /// Monte Carlo replications.
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Monitor a stream for a change in the parameters.
    Monitor {
        #[arg(long)]
        fit: Option<PathBuf>,
        #[arg(long)]
        stream: Option<PathBuf>,
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// One-step forecasts with prediction intervals.
    Forecast {
        #[arg(long)]
        fit: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Run a simulation study.
    Experiment {
        #[arg(value_enum)]
        study: Study,
        /// Replications (default depends on the study).
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        table: Option<PathBuf>,
    },
}

fn path_value(p: &std::path::Path) -> toml::Value {
    toml::Value::String(p.display().to_string())
}

fn overrides(cli: &Cli) -> CliResult<Vec<(String, toml::Value)>> {
    let mut out = cli.set.iter().map(|s| parse_override(s)).collect::<CliResult<Vec<_>>>()?;
    if let Some(seed) = cli.seed {
        let seed = i64::try_from(seed).map_err(|_| CliError::Usage("seed must be below 2^63".into()))?;
        out.push(("seed".into(), seed.into()));
    }
    let mut push_path = |key: &str, v: &Option<PathBuf>| {
        if let Some(p) = v {
            out.push((key.into(), path_value(p)));
        }
    };
    match &cli.command {
        Command::Simulate { .. } => {}
        Command::Fit { input } => push_path("input", input),
        Command::Calibrate { fit, .. } => push_path("fit", fit),
        Command::Monitor { fit, stream, table, .. } => {
            push_path("fit", fit);
            push_path("stream", stream);
            push_path("table", table);
        }
        Command::Forecast { fit, input, .. } => {
            push_path("fit", fit);
            push_path("input", input);
        }
        Command::Experiment { table, .. } => push_path("table", table),
    }
    let mut push_num = |key: &str, v: Option<toml::Value>| {
        if let Some(v) = v {
            out.push((key.into(), v));
        }
    };
    let int = |v: Option<usize>| v.map(|n| toml::Value::Integer(n as i64));
    let float = |v: Option<f64>| v.map(toml::Value::Float);
    match &cli.command {
        Command::Simulate { n } => push_num("n", int(*n)),
        Command::Calibrate { reps, .. } => push_num("reps", int(*reps)),
        Command::Monitor { gamma, alpha, .. } => {
            push_num("gamma", float(*gamma));
            push_num("alpha", float(*alpha));
        }
        Command::Forecast { alpha, .. } => push_num("alpha", float(*alpha)),
        Command::Experiment { replications, .. } => push_num("replications", int(*replications)),
        Command::Fit { .. } => {}
    }
    Ok(out)
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure threads: {e}")))?;
    }
    let config = RunConfig::load(cli.config.as_deref(), &overrides(&cli)?)?;
    commands::ensure_dir(&cli.out)?;
    let ctx = Context { config, out_dir: cli.out };
    match cli.command {
        Command::Simulate { .. } => commands::simulate(&ctx),
        Command::Fit { .. } => commands::fit(&ctx),
        Command::Calibrate { .. } => commands::calibrate(&ctx),
        Command::Monitor { .. } => commands::monitor(&ctx),
        Command::Forecast { .. } => commands::forecast(&ctx),
        Command::Experiment { study, .. } => commands::experiment(&ctx, study),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
