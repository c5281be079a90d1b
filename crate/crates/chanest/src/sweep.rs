//! Full benchmark sweep: every method, both protocols, both orderings, a
//! fixed number of seeds. Runs are independent jobs executed on a bounded
//! worker pool; completed result files are skipped on re-invocation, and a
//! run that fails (non-finite loss) is recorded and flagged, never fatal.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::protocol::{TaskKind, TaskOrdering};
use crate::rng::derive_seed;
use crate::runner::{
    execute_run, load_or_generate_dataset, ordered_tasks, read_result, result_path, write_result,
    RunConfig,
};
use crate::strategies::Method;
use crate::Result;

pub const DEFAULT_SEEDS: usize = 5;

/// One cell-seed combination of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannedRun {
    pub method: Method,
    pub kind: TaskKind,
    pub ordering: TaskOrdering,
    pub seed_index: usize,
    pub run_seed: u64,
}

/// The run seed for sweep repetition `index`. It depends only on the index,
/// so every method and ordering sees the same initialization, batch order
/// and task data at a given repetition.
pub fn sweep_run_seed(base_seed: u64, index: usize) -> u64 {
    derive_seed(base_seed, "run", index as u64)
}

/// The full grid: all nine methods x {SNR, Tc} x {curriculum, random} x seeds.
pub fn plan_sweep(base_seed: u64, n_seeds: usize) -> Vec<PlannedRun> {
    let mut plan = Vec::new();
    for kind in [TaskKind::Snr, TaskKind::Tc] {
        for ordering in [TaskOrdering::Curriculum, TaskOrdering::Random] {
            for method in Method::ALL {
                for seed_index in 0..n_seeds {
                    plan.push(PlannedRun {
                        method,
                        kind,
                        ordering,
                        seed_index,
                        run_seed: sweep_run_seed(base_seed, seed_index),
                    });
                }
            }
        }
    }
    plan
}

/// Specialize the base config for one planned run.
pub fn config_for(base: &RunConfig, run: &PlannedRun) -> RunConfig {
    let mut cfg = base.clone();
    cfg.strategy.method = run.method;
    cfg.protocol.kind = run.kind;
    cfg.protocol.ordering = run.ordering;
    cfg.run_seed = run.run_seed;
    cfg
}

/// True when a valid result for this exact configuration already exists.
fn already_done(base: &RunConfig, run: &PlannedRun) -> bool {
    let cfg = config_for(base, run);
    let path = result_path(
        &base.output_dir,
        run.method,
        run.kind,
        run.ordering,
        run.run_seed,
    );
    match read_result(&path) {
        Ok(existing) => {
            existing.method == run.method
                && existing.kind == run.kind
                && existing.ordering == run.ordering
                && existing.run_seed == run.run_seed
                && existing.n_samples == cfg.n_samples
                && existing.system == cfg.system
                && existing.strategy == cfg.strategy
        }
        Err(_) => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SweepStats {
    pub executed: usize,
    pub skipped: usize,
    pub failed: usize,
}

/// Generate (or validate) every dataset the sweep will touch. Done up front
/// and sequentially so the parallel phase only reads.
pub fn ensure_sweep_datasets(base: &RunConfig, n_seeds: usize) -> Result<usize> {
    let mut files = 0;
    for kind in [TaskKind::Snr, TaskKind::Tc] {
        for seed_index in 0..n_seeds {
            let mut cfg = base.clone();
            cfg.protocol.kind = kind;
            cfg.run_seed = sweep_run_seed(base.run_seed, seed_index);
            for task in ordered_tasks(&cfg)? {
                load_or_generate_dataset(&cfg, &task)?;
                files += 1;
            }
        }
    }
    Ok(files)
}

/// Execute the sweep on `jobs` workers, skipping completed runs.
pub fn run_sweep(base: &RunConfig, n_seeds: usize, jobs: usize) -> Result<SweepStats> {
    base.validate()?;
    std::fs::create_dir_all(base.output_dir.join("results"))?;
    ensure_sweep_datasets(base, n_seeds)?;

    let plan = plan_sweep(base.run_seed, n_seeds);
    let executed = AtomicUsize::new(0);
    let skipped = AtomicUsize::new(0);
    let failed = AtomicUsize::new(0);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| crate::Error::Config(format!("worker pool: {e}")))?;

    let results: Vec<Result<()>> = pool.install(|| {
        plan.par_iter()
            .map(|run| {
                if already_done(base, run) {
                    skipped.fetch_add(1, Ordering::Relaxed);
                    return Ok(());
                }
                let cfg = config_for(base, run);
                let result = execute_run(&cfg)?;
                if result.failed {
                    failed.fetch_add(1, Ordering::Relaxed);
                    eprintln!(
                        "warning: run {} {} {} seed{} failed: {}",
                        run.kind.key(),
                        run.ordering.key(),
                        run.method.key(),
                        run.run_seed,
                        result.fail_reason.as_deref().unwrap_or("unknown")
                    );
                }
                write_result(&base.output_dir, &result)?;
                executed.fetch_add(1, Ordering::Relaxed);
                Ok(())
            })
            .collect()
    });
    for r in results {
        r?;
    }

    Ok(SweepStats {
        executed: executed.load(Ordering::Relaxed),
        skipped: skipped.load(Ordering::Relaxed),
        failed: failed.load(Ordering::Relaxed),
    })
}

/// Count the result files present under an output directory.
pub fn completed_runs(out_dir: &Path) -> usize {
    let dir = out_dir.join("results");
    match std::fs::read_dir(dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok())
            .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
            .count(),
        Err(_) => 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_arithmetic() {
        let plan = plan_sweep(1, 5);
        // 9 methods x 2 protocols x 2 orderings x 5 seeds.
        assert_eq!(plan.len(), 180);
        let cl_and_no_cl = plan.iter().filter(|r| r.method != Method::Joint).count();
        assert_eq!(cl_and_no_cl, 160);
        let joint = plan.iter().filter(|r| r.method == Method::Joint).count();
        assert_eq!(joint, 20);
    }

    #[test]
    fn seeds_are_shared_across_methods() {
        let plan = plan_sweep(7, 3);
        let seeds_for = |m: Method| -> Vec<u64> {
            let mut s: Vec<u64> = plan
                .iter()
                .filter(|r| {
                    r.method == m
                        && r.kind == TaskKind::Snr
                        && r.ordering == TaskOrdering::Curriculum
                })
                .map(|r| r.run_seed)
                .collect();
            s.sort_unstable();
            s
        };
        assert_eq!(seeds_for(Method::NoCl), seeds_for(Method::Derpp));
        let s = seeds_for(Method::NoCl);
        assert_eq!(s.len(), 3);
        let mut dedup = s.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 3);
    }

    #[test]
    fn tiny_sweep_executes_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let mut base = RunConfig {
            output_dir: dir.path().to_path_buf(),
            n_samples: 60,
            ..RunConfig::default()
        };
        base.strategy.epochs = 1;

        // Shrink the grid by running only two seeds.
        let stats = run_sweep(&base, 2, 1).unwrap();
        assert_eq!(stats.executed, 9 * 2 * 2 * 2);
        assert_eq!(stats.skipped, 0);
        assert_eq!(completed_runs(&base.output_dir), stats.executed);

        // Second invocation does nothing.
        let again = run_sweep(&base, 2, 1).unwrap();
        assert_eq!(again.executed, 0);
        assert_eq!(again.skipped, 72);

        // Removing one file recomputes exactly that run.
        let victim = result_path(
            &base.output_dir,
            Method::Er,
            TaskKind::Snr,
            TaskOrdering::Random,
            sweep_run_seed(base.run_seed, 1),
        );
        std::fs::remove_file(&victim).unwrap();
        let resumed = run_sweep(&base, 2, 1).unwrap();
        assert_eq!(resumed.executed, 1);
        assert_eq!(resumed.skipped, 71);
        assert!(victim.exists());
    }
}
