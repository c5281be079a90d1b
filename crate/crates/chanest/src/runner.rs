//! Single-run execution: build the ordered task sequence, fetch or generate
//! its datasets, train under the configured strategy, and record the error
//! matrix plus transfer metrics into a JSON result.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::channel::{generate_dataset, Dataset, SystemConfig};
use crate::dataset_io::{dataset_path, read_dataset, write_dataset, DatasetHeader};
use crate::metrics::{avg_mse, bwt, eval_row, fwt, ErrorMatrix};
use crate::nn::{dims_for_system, Mlp};
use crate::protocol::{
    build_tasks, order_tasks, system_for_task, TaskKind, TaskOrdering, TaskSpec,
};
use crate::rng::{self, derive_seed};
use crate::strategies::{joint_train, train_task, Method, StrategyConfig, TrainState};
use crate::{Error, Result};

/// Protocol block of the run config file. Seeds left unset are derived from
/// the run seed, so a bare config still pins every stochastic choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSettings {
    pub kind: TaskKind,
    pub ordering: TaskOrdering,
    pub order_seed: Option<u64>,
    pub data_seed: Option<u64>,
}

impl Default for ProtocolSettings {
    fn default() -> Self {
        ProtocolSettings {
            kind: TaskKind::Snr,
            ordering: TaskOrdering::Curriculum,
            order_seed: None,
            data_seed: None,
        }
    }
}

/// Everything one run needs; (config, run_seed) fully determines the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub protocol: ProtocolSettings,
    pub strategy: StrategyConfig,
    pub run_seed: u64,
    /// Samples generated per task (90/10 train/test split).
    pub n_samples: usize,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            system: SystemConfig::default(),
            protocol: ProtocolSettings::default(),
            strategy: StrategyConfig::default(),
            run_seed: 1,
            n_samples: 20_000,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.strategy.validate()?;
        if self.n_samples < self.system.m_rx {
            return Err(Error::Config(format!(
                "n_samples {} is below m_rx {}",
                self.n_samples, self.system.m_rx
            )));
        }
        Ok(())
    }

    /// Seed the task data is drawn from.
    pub fn data_seed(&self) -> u64 {
        self.protocol
            .data_seed
            .unwrap_or_else(|| derive_seed(self.run_seed, "data", 0))
    }

    /// Seed the random task order is drawn from.
    pub fn order_seed(&self) -> u64 {
        self.protocol
            .order_seed
            .unwrap_or_else(|| derive_seed(self.run_seed, "order", 0))
    }
}

/// Per-run record written to disk. `wall_clock_secs` is the only
/// non-deterministic field; comparisons for reproducibility zero it first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: Method,
    pub kind: TaskKind,
    pub ordering: TaskOrdering,
    pub run_seed: u64,
    pub order_seed: u64,
    pub data_seed: u64,
    pub n_samples: usize,
    pub system: SystemConfig,
    pub strategy: StrategyConfig,
    /// Tasks in the order they were learned.
    pub task_order: Vec<TaskSpec>,
    /// Random-init test error per task; empty for joint training.
    pub b_bar: Vec<f64>,
    /// Row i recorded after task i; a single final row for joint training.
    pub error_matrix: Vec<Vec<f64>>,
    pub avg_mse: Option<f64>,
    pub fwt: Option<f64>,
    pub bwt: Option<f64>,
    pub failed: bool,
    pub fail_reason: Option<String>,
    pub wall_clock_secs: f64,
}

impl RunResult {
    /// Copy with the timing field zeroed, for byte-level comparisons.
    pub fn canonical(&self) -> RunResult {
        let mut c = self.clone();
        c.wall_clock_secs = 0.0;
        c
    }
}

/// Conventional result path for a run.
pub fn result_path(
    out: &Path,
    method: Method,
    kind: TaskKind,
    ordering: TaskOrdering,
    run_seed: u64,
) -> PathBuf {
    out.join("results").join(format!(
        "{}_{}_{}_seed{}.json",
        kind.key(),
        ordering.key(),
        method.key(),
        run_seed
    ))
}

/// The ordered task sequence a config describes.
pub fn ordered_tasks(cfg: &RunConfig) -> Result<Vec<TaskSpec>> {
    let tasks = build_tasks(cfg.protocol.kind, &cfg.system, cfg.data_seed())?;
    Ok(order_tasks(&tasks, cfg.protocol.ordering, cfg.order_seed()))
}

/// Load the task's dataset from the cache directory, or generate it (and
/// cache it) when missing or stale.
pub fn load_or_generate_dataset(cfg: &RunConfig, task: &TaskSpec) -> Result<Dataset> {
    let system = system_for_task(&cfg.system, task);
    let path = dataset_path(
        &cfg.output_dir,
        task.kind.key(),
        cfg.data_seed(),
        task.task_id,
    );
    if path.exists() {
        if let Ok((header, ds)) = read_dataset(&path) {
            if header.system == system
                && header.seed == task.data_seed
                && header.n_train + header.n_test == cfg.n_samples
            {
                return Ok(ds);
            }
        }
    }
    let ds = generate_dataset(&system, task.data_seed, cfg.n_samples, task.value)?;
    let header = DatasetHeader {
        system,
        seed: task.data_seed,
        n_train: ds.train.len(),
        n_test: ds.test.len(),
        feature_dim: 2 * cfg.system.n_tx,
        task_value: task.value,
    };
    write_dataset(&path, &header, &ds)?;
    Ok(ds)
}

fn finite_row(row: &[f64]) -> bool {
    row.iter().all(|v| v.is_finite())
}

/// Execute one run end to end. Training failures (non-finite loss) abort the
/// sequence and produce a result marked failed rather than an error.
pub fn execute_run(cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    let started = Instant::now();
    let tasks = ordered_tasks(cfg)?;
    let datasets: Vec<Dataset> = tasks
        .iter()
        .map(|t| load_or_generate_dataset(cfg, t))
        .collect::<Result<_>>()?;

    let mut init_rng = rng::stream(cfg.run_seed, "init", 0);
    let params = Mlp::init(&dims_for_system(&cfg.system), &mut init_rng);

    let mut result = RunResult {
        method: cfg.strategy.method,
        kind: cfg.protocol.kind,
        ordering: cfg.protocol.ordering,
        run_seed: cfg.run_seed,
        order_seed: cfg.order_seed(),
        data_seed: cfg.data_seed(),
        n_samples: cfg.n_samples,
        system: cfg.system.clone(),
        strategy: cfg.strategy.clone(),
        task_order: tasks.clone(),
        b_bar: Vec::new(),
        error_matrix: Vec::new(),
        avg_mse: None,
        fwt: None,
        bwt: None,
        failed: false,
        fail_reason: None,
        wall_clock_secs: 0.0,
    };

    let mut shuffle_rng = rng::stream(cfg.run_seed, "shuffle", 0);
    let mut method_rng = rng::stream(cfg.run_seed, "method", 0);

    if cfg.strategy.method == Method::Joint {
        match joint_train(
            &cfg.strategy,
            &datasets,
            params,
            &mut shuffle_rng,
            &mut method_rng,
        ) {
            Ok(final_params) => {
                let row = eval_row(&final_params, &datasets);
                if finite_row(&row) {
                    result.avg_mse = Some(row.iter().sum::<f64>() / row.len() as f64);
                    result.error_matrix.push(row);
                } else {
                    result.failed = true;
                    result.fail_reason = Some("non-finite evaluation".into());
                }
            }
            Err(e) => {
                result.failed = true;
                result.fail_reason = Some(e.to_string());
            }
        }
        result.wall_clock_secs = started.elapsed().as_secs_f64();
        return Ok(result);
    }

    let b_bar = eval_row(&params, &datasets);
    let mut matrix = ErrorMatrix::new(tasks.len(), b_bar.clone());
    result.b_bar = b_bar;

    let mut state = TrainState::new(params, &cfg.strategy);
    for (i, task) in datasets.iter().enumerate() {
        match train_task(
            state,
            &cfg.strategy,
            task,
            &mut shuffle_rng,
            &mut method_rng,
        ) {
            Ok(next) => state = next,
            Err(e) => {
                result.failed = true;
                result.fail_reason = Some(format!("task {i}: {e}"));
                result.wall_clock_secs = started.elapsed().as_secs_f64();
                return Ok(result);
            }
        }
        let row = eval_row(&state.params, &datasets);
        if !finite_row(&row) {
            result.failed = true;
            result.fail_reason = Some(format!("non-finite evaluation after task {i}"));
            result.wall_clock_secs = started.elapsed().as_secs_f64();
            return Ok(result);
        }
        result.error_matrix.push(row.clone());
        matrix.push_row(row);
    }

    result.avg_mse = Some(avg_mse(&matrix));
    result.fwt = Some(fwt(&matrix));
    result.bwt = Some(bwt(&matrix));
    result.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(result)
}

/// Serialize a result to pretty JSON bytes.
pub fn result_to_json(result: &RunResult) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(result)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Write the per-run JSON (atomically) and return its path.
pub fn write_result(out_dir: &Path, result: &RunResult) -> Result<PathBuf> {
    let path = result_path(
        out_dir,
        result.method,
        result.kind,
        result.ordering,
        result.run_seed,
    );
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, result_to_json(result)?)?;
    std::fs::rename(&tmp, &path)?;
    Ok(path)
}

pub fn read_result(path: &Path) -> Result<RunResult> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
