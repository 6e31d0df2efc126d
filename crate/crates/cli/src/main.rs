//! Command-line harness for pose-regression fine-tuning experiments:
//! synthetic data generation, pretraining, self-supervised fine-tuning,
//! evaluation, the three experiment sweeps, and the analytic on-device
//! cost table.
//!
//! Every run writes its artifacts under the output directory along with
//! a manifest recording the tool version, the config hash, and the
//! effective seed. Commands are deterministic: the same config and seed
//! produce bit-identical CSVs.

mod commands;
mod config;
mod fail;
mod plot;
mod pool;
mod runs;
mod table;

use clap::{Parser, Subcommand};
use config::Ctx;
use fail::CliResult;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "fieldtune",
    version = fieldtune_core::VERSION,
    about = "On-device-style fine-tuning experiments for vision pose regression",
    long_about = "On-device-style fine-tuning experiments for vision pose regression.\n\n\
        Configuration comes from a TOML file (--config) with one section per\n\
        subcommand; unknown keys are rejected. The global knobs may also be set\n\
        via environment variables with the FIELDTUNE_ prefix: FIELDTUNE_SEED,\n\
        FIELDTUNE_OUT, FIELDTUNE_JOBS. Precedence: command-line flag, then\n\
        environment, then config file.\n\n\
        Exit codes: 0 success, 2 config error, 3 ingestion error, 4 run failure."
)]
struct Cli {
    /// Experiment config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; every stream of randomness derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts and the manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for independent runs within a sweep.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic labeled flight sequences.
    Synth,
    /// Supervised pretraining; saves the best-validation checkpoint.
    Pretrain,
    /// One fine-tuning run from a checkpoint on one sequence.
    Finetune,
    /// Evaluate a checkpoint on a labeled sequence.
    Eval,
    /// Sweep fine-tuning set duration and rate (ideal labels).
    SweepAcquisition,
    /// Compare the update strategies across set sizes (ideal labels).
    CompareMethods,
    /// Run the loss-scenario ladder over a pair-delta grid.
    LossLadder,
    /// Emit the analytic workload and timing table.
    Cost,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Pretrain => "pretrain",
            Command::Finetune => "finetune",
            Command::Eval => "eval",
            Command::SweepAcquisition => "sweep-acquisition",
            Command::CompareMethods => "compare-methods",
            Command::LossLadder => "loss-ladder",
            Command::Cost => "cost",
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(&cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    let ctx = config::resolve(
        cli.config.as_deref(),
        cli.seed,
        cli.out.clone(),
        cli.jobs,
    )?;
    std::fs::create_dir_all(&ctx.out).map_err(|e| {
        fail::CliError::run(format!("cannot create {}: {e}", ctx.out.display()))
    })?;
    let outputs = match cli.command {
        Command::Synth => commands::synth::run(&ctx)?,
        Command::Pretrain => commands::pretrain::run(&ctx)?,
        Command::Finetune => commands::finetune::run(&ctx)?,
        Command::Eval => commands::eval::run(&ctx)?,
        Command::SweepAcquisition => commands::sweep_acquisition::run(&ctx)?,
        Command::CompareMethods => commands::compare_methods::run(&ctx)?,
        Command::LossLadder => commands::loss_ladder::run(&ctx)?,
        Command::Cost => commands::cost::run(&ctx)?,
    };
    write_manifest(&ctx, cli.command.name(), &outputs)
}

/// Records what produced the artifacts: tool version, config hash, and
/// the effective seed. Deliberately timestamp-free so re-runs are
/// byte-identical.
fn write_manifest(ctx: &Ctx, command: &str, outputs: &[String]) -> CliResult<()> {
    let mut text = String::new();
    text.push_str("tool = \"fieldtune\"\n");
    text.push_str(&format!("version = \"{}\"\n", fieldtune_core::VERSION));
    text.push_str(&format!("command = \"{command}\"\n"));
    text.push_str(&format!("config_sha256 = \"{}\"\n", ctx.config_sha256));
    text.push_str(&format!("seed = {}\n", ctx.seed));
    text.push_str(&format!("jobs = {}\n", ctx.jobs));
    let quoted: Vec<String> = outputs.iter().map(|o| format!("\"{o}\"")).collect();
    text.push_str(&format!("outputs = [{}]\n", quoted.join(", ")));
    let path = ctx.out.join("manifest.toml");
    std::fs::write(&path, text)
        .map_err(|e| fail::CliError::run(format!("cannot write {}: {e}", path.display())))
}
