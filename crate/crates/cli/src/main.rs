use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use stylesynth_core::harness::{
    run_ablation_grid, run_experiment, run_seed, run_sweep, write_outputs, Execution,
    ExperimentConfig, Report, SweepParam,
};
use stylesynth_core::Result;

#[derive(Parser)]
#[command(name = "stylesynth", version, about = "Style word vector experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of consecutive master seeds.
    #[arg(long, default_value_t = 3)]
    seeds: usize,
    /// Run cells one at a time.
    #[arg(long)]
    serial: bool,
}

#[derive(Subcommand)]
enum Command {
    /// One experiment over several seeds.
    Run(Common),
    /// Sweep the number of styles (K) or iterations (L).
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        param: SweepParam,
        /// Comma separated, strictly ascending.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
    /// Loss-term and classification-loss ablations.
    Ablate(Common),
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_json(&text)
}

fn execute(cli: Cli) -> Result<()> {
    let start = Instant::now();
    let common = match &cli.command {
        Command::Run(c) | Command::Ablate(c) | Command::Sweep { common: c, .. } => c,
    };
    let config = load_config(&common.config)?;
    let exec = if common.serial {
        Execution::Serial
    } else {
        Execution::Parallel
    };
    let report: Report = match &cli.command {
        Command::Run(_) => run_experiment(&config, common.seeds, exec)?,
        Command::Sweep { param, values, .. } => {
            run_sweep(&config, *param, values, common.seeds, exec)?
        }
        Command::Ablate(_) => run_ablation_grid(&config, common.seeds, exec)?,
    };
    let wants_artifacts =
        config.outputs.styles || config.outputs.classifier || config.outputs.samples;
    let first = match (&cli.command, wants_artifacts) {
        (Command::Run(_), true) => Some(run_seed(&config, config.seed)?),
        _ => None,
    };
    write_outputs(
        &common.out,
        &config,
        &report,
        start.elapsed().as_secs_f64(),
        first.as_ref(),
    )?;
    for row in &report.rows {
        println!(
            "{:<20} {:>2}{:<4} trained {:.4} ± {:.4}  zero-shot {:.4} ± {:.4}",
            row.label,
            row.param,
            if row.value.is_empty() {
                String::new()
            } else {
                format!("={}", row.value)
            },
            row.trained.mean,
            row.trained.stderr,
            row.zero_shot.mean,
            row.zero_shot.stderr,
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
