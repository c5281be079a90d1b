//! Task sequences: one axis varies the SNR level, the other the coherence
//! time, and each sequence is presented either curriculum-style (easy to
//! hard, i.e. descending value) or in a seeded random order.

use serde::{Deserialize, Serialize};

use crate::channel::SystemConfig;
use crate::rng::{self, derive_seed};
use crate::{Error, Result};

/// Which system parameter a task sequence varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "snr")]
    Snr,
    #[serde(rename = "tc")]
    Tc,
}

impl TaskKind {
    pub fn key(&self) -> &'static str {
        match self {
            TaskKind::Snr => "snr",
            TaskKind::Tc => "tc",
        }
    }

    /// Display name used in report rows.
    pub fn display(&self) -> &'static str {
        match self {
            TaskKind::Snr => "T_SNR",
            TaskKind::Tc => "T_Tc",
        }
    }

    pub fn parse(s: &str) -> Result<TaskKind> {
        match s.to_ascii_lowercase().as_str() {
            "snr" => Ok(TaskKind::Snr),
            "tc" => Ok(TaskKind::Tc),
            _ => Err(Error::Config(format!("unknown protocol '{s}'"))),
        }
    }
}

/// Task presentation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskOrdering {
    #[serde(rename = "curriculum")]
    Curriculum,
    #[serde(rename = "random")]
    Random,
}

impl TaskOrdering {
    pub fn key(&self) -> &'static str {
        match self {
            TaskOrdering::Curriculum => "curriculum",
            TaskOrdering::Random => "random",
        }
    }

    pub fn display(&self) -> &'static str {
        match self {
            TaskOrdering::Curriculum => "Curriculum",
            TaskOrdering::Random => "Random",
        }
    }

    pub fn parse(s: &str) -> Result<TaskOrdering> {
        match s.to_ascii_lowercase().as_str() {
            "curriculum" => Ok(TaskOrdering::Curriculum),
            "random" => Ok(TaskOrdering::Random),
            _ => Err(Error::Config(format!("unknown ordering '{s}'"))),
        }
    }
}

/// One task: the varied parameter value plus the seed its data is drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: usize,
    pub kind: TaskKind,
    pub value: f64,
    pub data_seed: u64,
}

/// SNR level fixed while the coherence time varies.
pub const TC_PROTOCOL_SNR_DB: f64 = 10.0;
/// Coherence time fixed while the SNR varies.
pub const SNR_PROTOCOL_TC: usize = 20;

/// Eleven tasks at 0, 2, ..., 20 dB with the coherence time pinned.
pub fn build_snr_tasks(base: &SystemConfig, master_seed: u64) -> Result<Vec<TaskSpec>> {
    base.validate()?;
    Ok((0..11)
        .map(|i| TaskSpec {
            task_id: i,
            kind: TaskKind::Snr,
            value: (2 * i) as f64,
            data_seed: derive_seed(master_seed, "task-snr", i as u64),
        })
        .collect())
}

/// Twenty tasks at 5, 10, ..., 100 symbol periods with the SNR pinned.
pub fn build_tc_tasks(base: &SystemConfig, master_seed: u64) -> Result<Vec<TaskSpec>> {
    base.validate()?;
    Ok((0..20)
        .map(|i| TaskSpec {
            task_id: i,
            kind: TaskKind::Tc,
            value: (5 * (i + 1)) as f64,
            data_seed: derive_seed(master_seed, "task-tc", i as u64),
        })
        .collect())
}

pub fn build_tasks(kind: TaskKind, base: &SystemConfig, master_seed: u64) -> Result<Vec<TaskSpec>> {
    match kind {
        TaskKind::Snr => build_snr_tasks(base, master_seed),
        TaskKind::Tc => build_tc_tasks(base, master_seed),
    }
}

/// Curriculum presents high SNR / long coherence first (descending value);
/// random applies a seeded uniform permutation.
pub fn order_tasks(tasks: &[TaskSpec], ordering: TaskOrdering, order_seed: u64) -> Vec<TaskSpec> {
    assert!(!tasks.is_empty(), "cannot order an empty task list");
    let mut out = tasks.to_vec();
    match ordering {
        TaskOrdering::Curriculum => {
            out.sort_by(|a, b| b.value.partial_cmp(&a.value).unwrap());
        }
        TaskOrdering::Random => {
            let mut rng = rng::stream(order_seed, "order", 0);
            rng::shuffle(&mut rng, &mut out);
        }
    }
    out
}

/// The system configuration a task's data is generated under.
pub fn system_for_task(base: &SystemConfig, task: &TaskSpec) -> SystemConfig {
    let mut cfg = base.clone();
    match task.kind {
        TaskKind::Snr => {
            cfg.snr_db = task.value;
            cfg.coherence_symbols = SNR_PROTOCOL_TC;
        }
        TaskKind::Tc => {
            cfg.coherence_symbols = task.value as usize;
            cfg.snr_db = TC_PROTOCOL_SNR_DB;
        }
    }
    cfg
}
