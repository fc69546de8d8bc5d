//! Command-line entry point: configures and runs one or more schedules,
//! then writes the comparison artifacts.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use liss::config::{parse_config, Overrides};
use liss::experiment::run_comparison;

#[derive(Parser, Debug)]
#[command(
    name = "liss",
    about = "Continual self-supervised pre-training for unpaired image translation",
    version
)]
struct Cli {
    /// TOML configuration file (flags override its values).
    #[arg(long)]
    config: Option<PathBuf>,

    /// Comma-separated schedules: baseline, parallel, sequential, continual.
    #[arg(long)]
    schedule: Option<String>,

    /// Dataset source: synthetic or paths.
    #[arg(long)]
    dataset: Option<String>,

    /// Domain-A image directory (dataset = paths).
    #[arg(long, value_name = "DIR")]
    data_a: Option<PathBuf>,

    /// Domain-B image directory (dataset = paths).
    #[arg(long, value_name = "DIR")]
    data_b: Option<PathBuf>,

    /// Root holding depth_a/ and depth_b/ pseudo-label directories.
    #[arg(long, value_name = "DIR")]
    depth_dir: Option<PathBuf>,

    /// Square image size in pixels (divisible by 4, at least 32).
    #[arg(long)]
    size: Option<usize>,

    /// Translation-task steps to run.
    #[arg(long)]
    steps: Option<u64>,

    #[arg(long)]
    seed: Option<u64>,

    /// Reference-encoder EMA coefficient in [0, 1].
    #[arg(long)]
    alpha: Option<f64>,

    /// Distillation weight of the continual schedule.
    #[arg(long)]
    beta: Option<f64>,

    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,

    /// Batch size per domain.
    #[arg(long)]
    batch: Option<usize>,

    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> liss::Result<()> {
    let overrides = Overrides {
        schedule: cli.schedule,
        dataset: cli.dataset,
        data_a: cli.data_a,
        data_b: cli.data_b,
        depth_dir: cli.depth_dir,
        size: cli.size,
        steps: cli.steps,
        seed: cli.seed,
        alpha: cli.alpha,
        beta: cli.beta,
        lr: cli.lr,
        batch: cli.batch,
        out: cli.out,
    };
    let cfg = parse_config(cli.config.as_deref(), &overrides)?;
    let report = run_comparison(&cfg)?;
    for (schedule, log) in &report.runs {
        println!(
            "{}: {} steps, {} validation points, metrics in {}",
            schedule.name(),
            log.final_step,
            log.records.len(),
            cfg.out.join(schedule.name()).join("metrics.csv").display()
        );
    }
    println!("comparison report: {}", cfg.out.join("comparison.txt").display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
