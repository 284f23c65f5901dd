//! Batch CLI over the experiment harness. Exit codes: 0 success, 2 config
//! or validation problems, 3 file I/O problems, 4 numeric failures.

use clap::{Args, Parser, Subcommand};
use ntn_core::error::{Error, Result};
use ntn_core::experiment::{
    cmd_ablate, cmd_diagnose, cmd_make_testbed, cmd_sweep_lambda, load_config, resolve,
    run_experiment, ResolvedConfig, Variant, DEFAULT_LAMBDA_GRID,
};
use ntn_core::metrics::MetricParams;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "ntn", version, about = "Frequency-aware diffusion inpainting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config.
    Run(RunArgs),
    /// Run the experiment once per split fraction and aggregate final metrics.
    SweepLambda(SweepArgs),
    /// Run the experiment unablated and with one variant, side by side.
    Ablate(AblateArgs),
    /// Compute frequency diagnostics over a directory of step snapshots.
    Diagnose(DiagnoseArgs),
    /// Write the bundled testbed models as JSON files.
    MakeTestbed(MakeTestbedArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides NTN_OUT and the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed; overrides NTN_SEED and the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the full trajectory under the output directory.
    #[arg(long)]
    emit_trajectory: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated split fractions in (0, 1).
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Variant name (see the error message for the full list).
    #[arg(long)]
    variant: String,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Directory of step snapshots (*.bin).
    dir: PathBuf,
    /// Output CSV path; defaults to diagnostics.csv next to the snapshots.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MakeTestbedArgs {
    /// Target directory; overrides NTN_OUT. Defaults to ./testbeds.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn env_out() -> Option<PathBuf> {
    std::env::var_os("NTN_OUT").map(PathBuf::from)
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("NTN_SEED") {
        Ok(text) => text
            .parse::<u64>()
            .map(Some)
            .map_err(|_| Error::InvalidConfig(format!("NTN_SEED must be a u64, got {text:?}"))),
        Err(_) => Ok(None),
    }
}

/// Loads the config and applies the override chain (flag, then environment,
/// then config file) for the output directory and seed.
fn load_resolved(common: &CommonArgs) -> Result<ResolvedConfig> {
    let mut draft = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        draft.seed = Some(seed);
    } else if let Some(seed) = env_seed()? {
        draft.seed = Some(seed);
    }
    if let Some(out) = &common.out {
        draft.output_dir = Some(out.clone());
    } else if let Some(out) = env_out() {
        draft.output_dir = Some(out);
    }
    if common.emit_trajectory {
        draft.emit_trajectory = Some(true);
    }
    resolve(draft)
}

fn execute(command: Command) -> Result<String> {
    match command {
        Command::Run(args) => {
            let config = load_resolved(&args.common)?;
            let artifacts = run_experiment(&config, false)?;
            Ok(format!("run complete: {}", artifacts.output_dir.display()))
        }
        Command::SweepLambda(args) => {
            let config = load_resolved(&args.common)?;
            let lambdas = args.lambdas.unwrap_or_else(|| DEFAULT_LAMBDA_GRID.to_vec());
            let summary = cmd_sweep_lambda(&config, &lambdas)?;
            Ok(format!("sweep complete: {}", summary.display()))
        }
        Command::Ablate(args) => {
            let variant = Variant::parse(&args.variant)?;
            let config = load_resolved(&args.common)?;
            let paired = cmd_ablate(&config, variant)?;
            Ok(format!("ablation complete: {}", paired.display()))
        }
        Command::Diagnose(args) => {
            let out = cmd_diagnose(&args.dir, args.out.as_deref(), &MetricParams::default())?;
            Ok(format!("diagnostics written: {}", out.display()))
        }
        Command::MakeTestbed(args) => {
            let dir = args
                .out
                .or_else(env_out)
                .unwrap_or_else(|| PathBuf::from("testbeds"));
            cmd_make_testbed(&dir)?;
            Ok(format!("testbed models written: {}", dir.display()))
        }
    }
}

fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Io { .. } | Error::Snapshot { .. } => 3,
        Error::NonFinite(_) => 4,
        _ => 2,
    }
}

fn main() {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(message) => println!("{message}"),
        Err(error) => {
            eprintln!("error: {error}");
            std::process::exit(exit_code(&error));
        }
    }
}
