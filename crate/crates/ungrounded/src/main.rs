use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use serde::Serialize;
use ungrounded::config::{parse_overrides, ExperimentConfig, Preset};
use ungrounded::pipeline::{self, Context};
use ungrounded::AppResult;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    BuildTables,
    Train,
    Eval,
    Sweep,
    Probe,
    ClusterBaseline,
}

/// Learn letter identities from unlabeled glyph streams and evaluate them.
///
/// Settings resolve as defaults, then `--preset`, then `--config`, then
/// `--seed`, then trailing `--section.key=value` overrides.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    /// Flat `key = value` config file with optional `[section]` headers.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scale preset: `full` or `desk`.
    #[arg(long)]
    preset: Option<Preset>,
    /// Base seed for training restarts, evaluation sampling and clustering.
    #[arg(long)]
    seed: Option<u64>,
    /// Model files for `probe`; the first is the reference model.
    #[arg(long = "model")]
    models: Vec<PathBuf>,
    command: Command,
    /// Overrides of the form `--train.steps=500`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn print_json(v: &impl Serialize) -> AppResult<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| ungrounded::AppError::Internal(e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn run(cli: Cli) -> AppResult<()> {
    let mut overrides = std::collections::BTreeMap::new();
    if let Some(seed) = cli.seed {
        for key in ["train.seed", "eval.seed", "cluster.seed"] {
            overrides.insert(key.to_string(), seed.to_string());
        }
    }
    overrides.extend(parse_overrides(&cli.overrides)?);
    let cfg = ExperimentConfig::resolve(cli.preset, cli.config.as_deref(), &overrides)?;
    let mut ctx = Context::new(cfg);
    eprintln!("run directory {}", ctx.run_dir.display());
    match cli.command {
        Command::BuildTables => print_json(&pipeline::cmd_build_tables(&mut ctx)?),
        Command::Train => print_json(&pipeline::cmd_train(&mut ctx)?),
        Command::Eval => print_json(&pipeline::cmd_eval(&mut ctx)?),
        Command::Sweep => print_json(&pipeline::cmd_sweep(&mut ctx)?),
        Command::Probe => print_json(&pipeline::cmd_probe(&mut ctx, &cli.models)?),
        Command::ClusterBaseline => print_json(&pipeline::cmd_cluster_baseline(&mut ctx)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
