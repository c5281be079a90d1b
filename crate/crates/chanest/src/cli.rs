//! Command-line front end.
//!
//! Subcommands: `generate` (dataset files), `run` (one training run),
//! `sweep` (the full grid), `report` (tables and plot data from result
//! files), `fig2` (received-power histograms). Configuration comes from an
//! optional JSON file whose keys mirror the config types; flags override
//! file values, which override defaults.
//!
//! Exit codes: 0 success, 1 invalid configuration (the offending key is
//! named), 2 I/O failure (unwritable output directory, missing or empty
//! results directory).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dataset_io::{dataset_path, write_dataset, write_dataset_json, DatasetHeader};
use crate::protocol::{system_for_task, TaskKind, TaskOrdering};
use crate::runner::{execute_run, ordered_tasks, write_result, RunConfig};
use crate::strategies::Method;
use crate::sweep::{run_sweep, sweep_run_seed, DEFAULT_SEEDS};
use crate::{channel, fig2, report, Error, Result};

#[derive(Parser)]
#[command(
    name = "chanest",
    version,
    about = "Continual-learning benchmark for MIMO channel estimation"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// JSON config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the training method (no-cl, joint, si, er, agem, agem-r, fdr, der, derpp).
    #[arg(long)]
    method: Option<String>,
    /// Override the task protocol (snr | tc).
    #[arg(long)]
    protocol: Option<String>,
    /// Override the task ordering (curriculum | random).
    #[arg(long)]
    ordering: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset files for a protocol, one file per task per seed.
    Generate {
        #[command(flatten)]
        common: ConfigArgs,
        /// Number of sweep repetitions to generate data for.
        #[arg(long, default_value_t = DEFAULT_SEEDS)]
        seeds: usize,
        /// Also write a pretty JSON twin next to each binary file.
        #[arg(long)]
        json: bool,
    },
    /// Execute one training run and write its result JSON.
    Run {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Execute the full method x protocol x ordering x seed grid.
    Sweep {
        #[command(flatten)]
        common: ConfigArgs,
        /// Worker pool size.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Seeds per cell.
        #[arg(long, default_value_t = DEFAULT_SEEDS)]
        seeds: usize,
    },
    /// Aggregate result files into CSV tables and a summary.
    Report {
        /// Directory holding result files (or its parent).
        results_dir: PathBuf,
        /// Where to write the report files (defaults to the results dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit received-power histograms over the coherence-time and SNR grids.
    Fig2 {
        #[command(flatten)]
        common: ConfigArgs,
        /// Blocks per histogram.
        #[arg(long)]
        blocks: Option<usize>,
        /// Bins per histogram.
        #[arg(long, default_value_t = 100)]
        bins: usize,
    },
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            serde_json::from_str::<RunConfig>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.run_seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(method) = &args.method {
        cfg.strategy.method = Method::parse(method)?;
    }
    if let Some(protocol) = &args.protocol {
        cfg.protocol.kind = TaskKind::parse(protocol)?;
    }
    if let Some(ordering) = &args.ordering {
        cfg.protocol.ordering = TaskOrdering::parse(ordering)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_generate(common: &ConfigArgs, seeds: usize, json: bool) -> Result<()> {
    let base = load_config(common)?;
    let mut written = 0usize;
    let mut skipped = 0usize;
    for seed_index in 0..seeds {
        let mut cfg = base.clone();
        cfg.run_seed = sweep_run_seed(base.run_seed, seed_index);
        for task in ordered_tasks(&cfg)? {
            let system = system_for_task(&cfg.system, &task);
            let ds = channel::generate_dataset(&system, task.data_seed, cfg.n_samples, task.value)?;
            let header = DatasetHeader {
                system,
                seed: task.data_seed,
                n_train: ds.train.len(),
                n_test: ds.test.len(),
                feature_dim: 2 * cfg.system.n_tx,
                task_value: task.value,
            };
            let path = dataset_path(
                &cfg.output_dir,
                task.kind.key(),
                cfg.data_seed(),
                task.task_id,
            );
            if write_dataset(&path, &header, &ds)? {
                written += 1;
            } else {
                skipped += 1;
            }
            if json {
                write_dataset_json(&path.with_extension("json"), &header, &ds)?;
            }
        }
    }
    println!("generate: {written} file(s) written, {skipped} unchanged");
    Ok(())
}

fn cmd_run(common: &ConfigArgs) -> Result<()> {
    let cfg = load_config(common)?;
    let result = execute_run(&cfg)?;
    let path = write_result(&cfg.output_dir, &result)?;
    match (&result.failed, result.avg_mse) {
        (false, Some(avg)) => println!(
            "run: {} {} {} seed{} AVG_MSE {avg:.6} -> {}",
            result.kind.key(),
            result.ordering.key(),
            result.method.key(),
            result.run_seed,
            path.display()
        ),
        _ => println!(
            "run: FAILED ({}) -> {}",
            result.fail_reason.as_deref().unwrap_or("unknown"),
            path.display()
        ),
    }
    Ok(())
}

fn cmd_sweep(common: &ConfigArgs, jobs: usize, seeds: usize) -> Result<()> {
    let cfg = load_config(common)?;
    let stats = run_sweep(&cfg, seeds, jobs)?;
    println!(
        "sweep: {} executed, {} skipped, {} failed -> {}",
        stats.executed,
        stats.skipped,
        stats.failed,
        cfg.output_dir.join("results").display()
    );
    Ok(())
}

fn cmd_report(results_dir: &Path, out: Option<&Path>) -> Result<()> {
    let out_dir = out.unwrap_or(results_dir);
    let (agg, paths) = report::write_report(results_dir, out_dir)?;
    print!("{}", report::summary_text(&agg));
    println!(
        "report: {} / {} / {} / {}",
        paths.table.display(),
        paths.final_mse.display(),
        paths.evolution.display(),
        paths.summary.display()
    );
    Ok(())
}

fn cmd_fig2(common: &ConfigArgs, blocks: Option<usize>, bins: usize) -> Result<()> {
    let cfg = load_config(common)?;
    let n_blocks = blocks.unwrap_or(cfg.system.n_blocks);
    let summary = fig2::emit(&cfg.system, cfg.run_seed, n_blocks, bins, &cfg.output_dir)?;
    println!(
        "fig2: {} histograms, coherence-grid means {:?}, path gain {:.3e}",
        summary.files.len(),
        summary
            .tc_means
            .iter()
            .map(|m| (m * 10.0).round() / 10.0)
            .collect::<Vec<_>>(),
        summary.pathloss_gain
    );
    Ok(())
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Shape(_) => 1,
        _ => 2,
    }
}

/// Parse arguments, dispatch, and return the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Generate {
            common,
            seeds,
            json,
        } => cmd_generate(common, *seeds, *json),
        Command::Run { common } => cmd_run(common),
        Command::Sweep {
            common,
            jobs,
            seeds,
        } => cmd_sweep(common, *jobs, *seeds),
        Command::Report { results_dir, out } => cmd_report(results_dir, out.as_deref()),
        Command::Fig2 {
            common,
            blocks,
            bins,
        } => cmd_fig2(common, *blocks, *bins),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
