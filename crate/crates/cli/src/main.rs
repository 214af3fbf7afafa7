mod commands;
mod config;
mod output;
mod resolve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use thiserror::Error;

use commands::{Outcome, Run};
use config::{parse_value, Config, Value};
use output::{Format, RunDir};

/// Root for default run directories, replacing `runs/`.
const OUT_ENV: &str = "EPICONTROL_OUT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] epicontrol::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "epicontrol", version, about = "Controlled SIS-type processes, their mean-field limits and experiments")]
struct Cli {
    /// Config file of `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed (overrides `run.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for this run.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replications (overrides `run.reps`, or `experiment.reps` for experiments).
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Run replications on K threads (all cores when K is omitted).
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "0", value_name = "K")]
    parallel: Option<usize>,
    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
    /// Encodings for data tables.
    #[arg(long, global = true, value_parser = ["csv", "json", "both"])]
    format: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample paths of the uncontrolled chain.
    Simulate,
    /// Solve the shortest-path control problem.
    Solve,
    /// Integrate the mean-field ODE and classify its regime.
    Ode,
    /// Evaluate or simulate a control policy.
    Control {
        #[command(subcommand)]
        action: ControlAction,
    },
    /// Run an experiment and check its criteria.
    Experiment {
        #[arg(value_enum)]
        kind: ExperimentKind,
        /// Target for the argmax scan: `golden`, `p/q` or a decimal.
        #[arg(long)]
        xstar: Option<String>,
    },
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum ControlAction {
    Evaluate,
    Simulate,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ExperimentKind {
    Meanfield,
    Value,
    Argmax,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Solve => "solve",
            Command::Ode => "ode",
            Command::Control { action: ControlAction::Evaluate } => "control-evaluate",
            Command::Control { action: ControlAction::Simulate } => "control-simulate",
            Command::Experiment { kind: ExperimentKind::Meanfield, .. } => "experiment-meanfield",
            Command::Experiment { kind: ExperimentKind::Value, .. } => "experiment-value",
            Command::Experiment { kind: ExperimentKind::Argmax, .. } => "experiment-argmax",
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<Config, CliError> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?,
        None => String::new(),
    };
    let mut cfg = Config::parse(&text)?;
    if let Some(seed) = cli.seed {
        cfg.set("run.seed", Value::Num(seed as f64));
    }
    if let Some(reps) = cli.reps {
        let key = match cli.command {
            Command::Experiment { .. } => "experiment.reps",
            _ => "run.reps",
        };
        cfg.set(key, Value::Num(reps as f64));
    }
    if let Some(format) = &cli.format {
        cfg.set("output.format", Value::Str(format.clone()));
    }
    if let Command::Experiment { xstar: Some(x), .. } = &cli.command {
        cfg.set("experiment.xstar", parse_value(x)?);
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let cfg = resolve_config(cli)?;
    let seed = cfg.u64("run.seed")?;
    let format = Format::parse(cfg.str("output.format")?)?;
    let hash = cfg.hash();
    let dir = match (&cli.out, std::env::var_os(OUT_ENV)) {
        (Some(out), _) => out.clone(),
        (None, Some(root)) => PathBuf::from(root).join(format!("{}-{hash}", cli.command.name())),
        (None, None) => PathBuf::from("runs").join(format!("{}-{hash}", cli.command.name())),
    };
    let out = RunDir::create(&dir, cli.force, &hash, seed)?;
    let mut run = Run { cfg, out, format, seed };
    let threads = cli.parallel.unwrap_or(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("--parallel: {e}")))?;
    let outcome = pool.install(|| match &cli.command {
        Command::Simulate => commands::simulate(&mut run),
        Command::Solve => commands::solve(&mut run),
        Command::Ode => commands::ode(&mut run),
        Command::Control { action: ControlAction::Evaluate } => commands::control_evaluate(&mut run),
        Command::Control { action: ControlAction::Simulate } => commands::control_simulate(&mut run),
        Command::Experiment { kind: ExperimentKind::Meanfield, .. } => commands::experiment_meanfield(&mut run),
        Command::Experiment { kind: ExperimentKind::Value, .. } => commands::experiment_value(&mut run),
        Command::Experiment { kind: ExperimentKind::Argmax, .. } => commands::experiment_argmax(&mut run),
    })?;
    let echo = run.cfg.canonical();
    run.out.write_text("config.txt", |w| w.write_all(echo.as_bytes()))?;
    let mut files = run.out.files().to_vec();
    files.push("run.json".into());
    run.out.write_json(
        "run.json",
        json!({
            "command": cli.command.name(),
            "pass": outcome.pass,
            "files": files,
            "summary": outcome.summary,
        }),
    )?;
    println!(
        "{} {}: {} files in {}",
        cli.command.name(),
        if outcome.pass { "ok" } else { "FAILED criteria" },
        files.len(),
        run.out.path().display()
    );
    Ok(outcome)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(o) if o.pass => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(3),
        Err(e) => {
            eprintln!("epicontrol: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
