//! The nine training strategies: two baselines (sequential SGD and joint
//! training) plus seven continual-learning methods built from three
//! ingredients — a quadratic importance penalty, episodic replay, and
//! gradient projection.
//!
//! Buffer population comes in two modes. Boundary mode (A-GEM, FDR) rewrites
//! the buffer only in the task-end hook, giving every finished task an equal
//! share of the capacity. Reservoir mode (ER, A-GEM-R, DER, DER++) inserts
//! every training sample with the classic streaming rule that keeps each of
//! the first `n` items with probability `capacity / n`, so it needs no
//! boundary signal at all.
//!
//! Replay terms, alignment penalties and the projection constraint only
//! activate once at least one task has been completed; on the first task
//! every strategy walks the exact NO-CL trajectory (bit-identical parameters
//! under the same seed).

use serde::{Deserialize, Serialize};

use crate::channel::Dataset;
use crate::nn::{backward, Batch, GradVector, Mlp};
use crate::rng::{self, Stream};
use crate::{Error, Result};

/// Training strategy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "no-cl")]
    NoCl,
    #[serde(rename = "joint")]
    Joint,
    #[serde(rename = "si")]
    Si,
    #[serde(rename = "er")]
    Er,
    #[serde(rename = "agem")]
    Agem,
    #[serde(rename = "agem-r")]
    AgemR,
    #[serde(rename = "fdr")]
    Fdr,
    #[serde(rename = "der")]
    Der,
    #[serde(rename = "derpp")]
    Derpp,
}

impl Method {
    /// All methods in benchmark order (joint last).
    pub const ALL: [Method; 9] = [
        Method::NoCl,
        Method::Si,
        Method::Agem,
        Method::AgemR,
        Method::Er,
        Method::Fdr,
        Method::Der,
        Method::Derpp,
        Method::Joint,
    ];

    /// The eight sequentially-trained methods in report column order.
    pub const TABLE: [Method; 8] = [
        Method::NoCl,
        Method::Si,
        Method::Agem,
        Method::AgemR,
        Method::Er,
        Method::Fdr,
        Method::Der,
        Method::Derpp,
    ];

    /// Continual-learning methods proper (excludes both baselines).
    pub const CL: [Method; 7] = [
        Method::Si,
        Method::Agem,
        Method::AgemR,
        Method::Er,
        Method::Fdr,
        Method::Der,
        Method::Derpp,
    ];

    /// Identifier used in file names and the CLI.
    pub fn key(&self) -> &'static str {
        match self {
            Method::NoCl => "no-cl",
            Method::Joint => "joint",
            Method::Si => "si",
            Method::Er => "er",
            Method::Agem => "agem",
            Method::AgemR => "agem-r",
            Method::Fdr => "fdr",
            Method::Der => "der",
            Method::Derpp => "derpp",
        }
    }

    /// Display name used in report tables.
    pub fn display(&self) -> &'static str {
        match self {
            Method::NoCl => "NO-CL",
            Method::Joint => "JOINT",
            Method::Si => "SI",
            Method::Er => "ER",
            Method::Agem => "A-GEM",
            Method::AgemR => "A-GEM-R",
            Method::Fdr => "FDR",
            Method::Der => "DER",
            Method::Derpp => "DER++",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Method::ALL
            .into_iter()
            .find(|m| m.key() == norm || m.display().to_ascii_lowercase() == norm)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// Hyperparameters shared by every strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    pub method: Method,
    pub lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub replay_batch: usize,
    pub si_c: f64,
    pub si_xi: f64,
    pub der_alpha: f64,
    pub derpp_beta: f64,
    pub fdr_lambda: f64,
    pub epochs: usize,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            method: Method::NoCl,
            lr: 0.1,
            batch_size: 32,
            buffer_capacity: 200,
            replay_batch: 16,
            si_c: 0.003,
            si_xi: 1.0,
            der_alpha: 0.3,
            derpp_beta: 0.5,
            fdr_lambda: 0.5,
            epochs: 100,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::Config("lr must be positive and finite".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        for (name, v) in [
            ("si_c", self.si_c),
            ("si_xi", self.si_xi),
            ("der_alpha", self.der_alpha),
            ("derpp_beta", self.derpp_beta),
            ("fdr_lambda", self.fdr_lambda),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// One buffered example. Methods store what they need: ER and A-GEM keep the
/// ground truth, DER keeps the model output instead, DER++ keeps both, FDR
/// keeps the frozen output.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    pub features: Vec<f64>,
    pub target: Option<Vec<f64>>,
    pub stored_output: Option<Vec<f64>>,
    pub task_id: Option<usize>,
}

/// Bounded episodic memory.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: Vec<BufferEntry>,
    seen: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            entries: Vec::new(),
            seen: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn seen_count(&self) -> u64 {
        self.seen
    }

    pub fn entries(&self) -> &[BufferEntry] {
        &self.entries
    }

    /// Streaming insertion: item n is kept with probability capacity / n,
    /// and replaces a uniform victim when it is.
    pub fn reservoir_insert(&mut self, entry: BufferEntry, rng: &mut Stream) {
        self.seen += 1;
        if self.entries.len() < self.capacity {
            self.entries.push(entry);
            return;
        }
        if self.capacity == 0 {
            return;
        }
        let slot = rng::index_u64(rng, self.seen);
        if (slot as usize) < self.capacity {
            self.entries[slot as usize] = entry;
        }
    }

    /// `min(count, len)` distinct entry indices, uniform without replacement.
    pub fn sample_indices(&self, count: usize, rng: &mut Stream) -> Vec<usize> {
        let k = count.min(self.entries.len());
        rng::sample_without_replacement(rng, self.entries.len(), k)
    }

    /// Boundary-mode rebuild: trim every stored task's group to `share`
    /// entries (uniform subsample, original order kept) and append the new
    /// task's share.
    pub fn boundary_rebuild(&mut self, share: usize, fresh: Vec<BufferEntry>, rng: &mut Stream) {
        let mut groups: Vec<(usize, Vec<BufferEntry>)> = Vec::new();
        for e in self.entries.drain(..) {
            let id = e.task_id.unwrap_or(usize::MAX);
            match groups.iter_mut().find(|(g, _)| *g == id) {
                Some((_, list)) => list.push(e),
                None => groups.push((id, vec![e])),
            }
        }
        let mut rebuilt = Vec::with_capacity(self.capacity);
        for (_, group) in groups.iter_mut() {
            if group.len() > share {
                let mut keep = rng::sample_without_replacement(rng, group.len(), share);
                keep.sort_unstable();
                let kept: Vec<BufferEntry> = keep.iter().map(|&i| group[i].clone()).collect();
                rebuilt.extend(kept);
            } else {
                rebuilt.append(group);
            }
        }
        rebuilt.extend(fresh.into_iter().take(share));
        assert!(rebuilt.len() <= self.capacity, "boundary rebuild overflow");
        self.entries = rebuilt;
    }
}

/// Everything a sequential run mutates: parameters, memory, and the
/// importance accumulators (path integral w, consolidated importance omega,
/// anchor theta*).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: Mlp,
    pub buffer: ReplayBuffer,
    pub si_w: GradVector,
    pub si_omega: GradVector,
    pub si_theta_star: GradVector,
    pub tasks_seen: usize,
}

impl TrainState {
    pub fn new(params: Mlp, cfg: &StrategyConfig) -> Self {
        let n = params.param_count();
        let theta = params.flatten();
        TrainState {
            params,
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            si_w: GradVector::zeros(n),
            si_omega: GradVector::zeros(n),
            si_theta_star: theta,
            tasks_seen: 0,
        }
    }

    /// Replay machinery engages only once a previous task exists.
    fn replay_active(&self) -> bool {
        self.tasks_seen >= 1 && !self.buffer.is_empty()
    }
}

fn batch_from_entries<F>(buffer: &ReplayBuffer, indices: &[usize], target_of: F) -> Batch
where
    F: Fn(&BufferEntry) -> Vec<f64>,
{
    let mut features = Vec::with_capacity(indices.len());
    let mut targets = Vec::with_capacity(indices.len());
    for &i in indices {
        let e = &buffer.entries()[i];
        features.push(e.features.clone());
        targets.push(target_of(e));
    }
    Batch { features, targets }
}

/// Plain SGD on the batch MSE. Baseline for everything else.
pub fn no_cl_step(mut state: TrainState, batch: &Batch, lr: f64) -> (TrainState, f64) {
    let (loss, grad) = backward(&state.params, batch);
    state.params = state.params.sgd_step(&grad, lr);
    (state, loss)
}

/// Quadratic-penalty step. The update minimizes
/// `batch MSE + c * sum_k omega_k (theta_k - theta*_k)^2`, and the path
/// integral accumulates `w_k -= g_task_k * dtheta_k` with the unregularized
/// gradient and the realized update.
pub fn si_step(mut state: TrainState, batch: &Batch, cfg: &StrategyConfig) -> (TrainState, f64) {
    let (loss, g_task) = backward(&state.params, batch);
    let theta = state.params.flatten();
    let mut g_total = g_task.clone();
    if state.tasks_seen >= 1 {
        for k in 0..g_total.len() {
            g_total.0[k] +=
                2.0 * cfg.si_c * state.si_omega.0[k] * (theta.0[k] - state.si_theta_star.0[k]);
        }
    }
    state.params = state.params.sgd_step(&g_total, cfg.lr);
    let theta_new = state.params.flatten();
    for k in 0..theta.len() {
        state.si_w.0[k] -= g_task.0[k] * (theta_new.0[k] - theta.0[k]);
    }
    (state, loss)
}

/// Consolidate importances at a task boundary:
/// `omega_k += max(0, w_k / ((theta_k - theta*_k)^2 + xi))`, then re-anchor.
pub fn si_on_task_end(mut state: TrainState, cfg: &StrategyConfig) -> TrainState {
    let theta = state.params.flatten();
    for k in 0..theta.len() {
        let delta = theta.0[k] - state.si_theta_star.0[k];
        let add = state.si_w.0[k] / (delta * delta + cfg.si_xi);
        if add > 0.0 {
            state.si_omega.0[k] += add;
        }
        state.si_w.0[k] = 0.0;
    }
    state.si_theta_star = theta;
    state
}

/// Analytic gradient of the importance penalty, for gradient checks.
pub fn si_penalty_grad(
    cfg: &StrategyConfig,
    omega: &GradVector,
    theta: &GradVector,
    theta_star: &GradVector,
) -> GradVector {
    let mut g = GradVector::zeros(theta.len());
    for k in 0..theta.len() {
        g.0[k] = 2.0 * cfg.si_c * omega.0[k] * (theta.0[k] - theta_star.0[k]);
    }
    g
}

/// Replay step: one SGD step on the concatenation of the current batch with
/// a uniform draw from memory, then reservoir-insert the current samples.
pub fn er_step(
    mut state: TrainState,
    batch: &Batch,
    cfg: &StrategyConfig,
    rng: &mut Stream,
) -> (TrainState, f64) {
    let (loss, grad) = if state.replay_active() {
        let idx = state.buffer.sample_indices(cfg.replay_batch, rng);
        let replay = batch_from_entries(&state.buffer, &idx, |e| {
            e.target.clone().expect("replay entry without target")
        });
        let mut combined = batch.clone();
        combined.features.extend(replay.features);
        combined.targets.extend(replay.targets);
        backward(&state.params, &combined)
    } else {
        backward(&state.params, batch)
    };
    state.params = state.params.sgd_step(&grad, cfg.lr);
    for (x, t) in batch.features.iter().zip(&batch.targets) {
        state.buffer.reservoir_insert(
            BufferEntry {
                features: x.clone(),
                target: Some(t.clone()),
                stored_output: None,
                task_id: None,
            },
            rng,
        );
    }
    (state, loss)
}

/// Project `g` onto the half-space of non-conflicting directions: when
/// `g . g_ref < 0`, remove the conflicting component along `g_ref`.
pub fn agem_project(g: &GradVector, g_ref: &GradVector) -> GradVector {
    let dot = g.dot(g_ref);
    if dot >= 0.0 {
        return g.clone();
    }
    let denom = g_ref.dot(g_ref);
    if denom == 0.0 {
        // Degenerate reference; nothing to project against.
        return g.clone();
    }
    let mut out = g.clone();
    out.add_scaled(-dot / denom, g_ref);
    out
}

fn agem_step_impl(
    mut state: TrainState,
    batch: &Batch,
    cfg: &StrategyConfig,
    rng: &mut Stream,
) -> (TrainState, f64) {
    let (loss, g) = backward(&state.params, batch);
    let g_final = if state.replay_active() {
        let idx = state.buffer.sample_indices(cfg.replay_batch, rng);
        let replay = batch_from_entries(&state.buffer, &idx, |e| {
            e.target.clone().expect("memory entry without target")
        });
        let (_, g_ref) = backward(&state.params, &replay);
        agem_project(&g, &g_ref)
    } else {
        g
    };
    state.params = state.params.sgd_step(&g_final, cfg.lr);
    (state, loss)
}

/// Projection step with a boundary-populated memory.
pub fn agem_step(
    state: TrainState,
    batch: &Batch,
    cfg: &StrategyConfig,
    rng: &mut Stream,
) -> (TrainState, f64) {
    agem_step_impl(state, batch, cfg, rng)
}

/// Boundary hook shared by the boundary-buffer methods: store an equal
/// per-task share (capacity / tasks including the one just finished) of
/// uniformly drawn training samples.
fn boundary_share_entries<F>(
    state: &TrainState,
    task: &Dataset,
    rng: &mut Stream,
    mut make: F,
) -> (usize, Vec<BufferEntry>)
where
    F: FnMut(&crate::channel::DatasetSample) -> BufferEntry,
{
    let tasks_after = state.tasks_seen + 1;
    let share = state.buffer.capacity() / tasks_after;
    let take = share.min(task.train.len());
    let picks = rng::sample_without_replacement(rng, task.train.len(), take);
    let fresh = picks.iter().map(|&i| make(&task.train[i])).collect();
    (share, fresh)
}

/// Task-end hook for the boundary A-GEM variant.
pub fn agem_on_task_end(mut state: TrainState, task: &Dataset, rng: &mut Stream) -> TrainState {
    let task_id = state.tasks_seen;
    let (share, fresh) = boundary_share_entries(&state, task, rng, |s| BufferEntry {
        features: s.features.clone(),
        target: Some(s.target.clone()),
        stored_output: None,
        task_id: Some(task_id),
    });
    state.buffer.boundary_rebuild(share, fresh, rng);
    state
}

/// Projection step with a reservoir memory; no boundary hook at all.
pub fn agem_r_step(
    mut state: TrainState,
    batch: &Batch,
    cfg: &StrategyConfig,
    rng: &mut Stream,
) -> (TrainState, f64) {
    let (new_state, loss) = agem_step_impl(state, batch, cfg, rng);
    state = new_state;
    for (x, t) in batch.features.iter().zip(&batch.targets) {
        state.buffer.reservoir_insert(
            BufferEntry {
                features: x.clone(),
                target: Some(t.clone()),
                stored_output: None,
                task_id: None,
            },
            rng,
        );
    }
    (state, loss)
}

/// Output-alignment step against a boundary-populated memory of frozen
/// outputs: `batch MSE + lambda * mean || f(x_buf) - stored ||`-style MSE.
pub fn fdr_step(
    mut state: TrainState,
    batch: &Batch,
    cfg: &StrategyConfig,
    rng: &mut Stream,
) -> (TrainState, f64) {
    let (mut loss, mut grad) = backward(&state.params, batch);
    if state.replay_active() && cfg.fdr_lambda > 0.0 {
        let idx = state.buffer.sample_indices(cfg.replay_batch, rng);
        let replay = batch_from_entries(&state.buffer, &idx, |e| {
            e.stored_output
                .clone()
                .expect("alignment entry without output")
        });
        let (pen, g_pen) = backward(&state.params, &replay);
        grad.add_scaled(cfg.fdr_lambda, &g_pen);
        loss += cfg.fdr_lambda * pen;
    }
    state.params = state.params.sgd_step(&grad, cfg.lr);
    (state, loss)
}

/// Task-end hook for FDR: store (x, f(x)) pairs with outputs frozen now.
pub fn fdr_on_task_end(mut state: TrainState, task: &Dataset, rng: &mut Stream) -> TrainState {
    let task_id = state.tasks_seen;
    let params = state.params.clone();
    let (share, fresh) = boundary_share_entries(&state, task, rng, |s| BufferEntry {
        features: s.features.clone(),
        target: None,
        stored_output: Some(params.forward(&s.features)),
        task_id: Some(task_id),
    });
    state.buffer.boundary_rebuild(share, fresh, rng);
    state
}

/// Dark replay: align current outputs with stored ones from a reservoir
/// memory, then insert the current samples with their fresh outputs (for a
/// regression head the final-layer output is the prediction itself).
pub fn der_step(
    mut state: TrainState,
    batch: &Batch,
    cfg: &StrategyConfig,
    rng: &mut Stream,
) -> (TrainState, f64) {
    let (mut loss, mut grad) = backward(&state.params, batch);
    if state.replay_active() && cfg.der_alpha > 0.0 {
        let idx = state.buffer.sample_indices(cfg.replay_batch, rng);
        let replay = batch_from_entries(&state.buffer, &idx, |e| {
            e.stored_output
                .clone()
                .expect("dark replay entry without output")
        });
        let (pen, g_pen) = backward(&state.params, &replay);
        grad.add_scaled(cfg.der_alpha, &g_pen);
        loss += cfg.der_alpha * pen;
    }
    state.params = state.params.sgd_step(&grad, cfg.lr);
    let mut scratch = crate::nn::ForwardScratch::for_net(&state.params);
    for x in &batch.features {
        let out = state.params.forward_with(x, &mut scratch).to_vec();
        state.buffer.reservoir_insert(
            BufferEntry {
                features: x.clone(),
                target: None,
                stored_output: Some(out),
                task_id: None,
            },
            rng,
        );
    }
    (state, loss)
}

/// Dark replay with an extra ground-truth term over a second, independent
/// replay draw; the reservoir stores (x, y, output).
pub fn derpp_step(
    mut state: TrainState,
    batch: &Batch,
    cfg: &StrategyConfig,
    rng: &mut Stream,
) -> (TrainState, f64) {
    let (mut loss, mut grad) = backward(&state.params, batch);
    if state.replay_active() {
        if cfg.der_alpha > 0.0 {
            let idx = state.buffer.sample_indices(cfg.replay_batch, rng);
            let replay = batch_from_entries(&state.buffer, &idx, |e| {
                e.stored_output
                    .clone()
                    .expect("dark replay entry without output")
            });
            let (pen, g_pen) = backward(&state.params, &replay);
            grad.add_scaled(cfg.der_alpha, &g_pen);
            loss += cfg.der_alpha * pen;
        }
        if cfg.derpp_beta > 0.0 {
            let idx = state.buffer.sample_indices(cfg.replay_batch, rng);
            let replay = batch_from_entries(&state.buffer, &idx, |e| {
                e.target.clone().expect("replay entry without target")
            });
            let (pen, g_pen) = backward(&state.params, &replay);
            grad.add_scaled(cfg.derpp_beta, &g_pen);
            loss += cfg.derpp_beta * pen;
        }
    }
    state.params = state.params.sgd_step(&grad, cfg.lr);
    let mut scratch = crate::nn::ForwardScratch::for_net(&state.params);
    for (x, t) in batch.features.iter().zip(&batch.targets) {
        let out = state.params.forward_with(x, &mut scratch).to_vec();
        state.buffer.reservoir_insert(
            BufferEntry {
                features: x.clone(),
                target: Some(t.clone()),
                stored_output: Some(out),
                task_id: None,
            },
            rng,
        );
    }
    (state, loss)
}

/// One optimizer step under the configured method.
pub fn strategy_step(
    state: TrainState,
    batch: &Batch,
    cfg: &StrategyConfig,
    rng: &mut Stream,
) -> (TrainState, f64) {
    match cfg.method {
        Method::NoCl | Method::Joint => no_cl_step(state, batch, cfg.lr),
        Method::Si => si_step(state, batch, cfg),
        Method::Er => er_step(state, batch, cfg, rng),
        Method::Agem => agem_step(state, batch, cfg, rng),
        Method::AgemR => agem_r_step(state, batch, cfg, rng),
        Method::Fdr => fdr_step(state, batch, cfg, rng),
        Method::Der => der_step(state, batch, cfg, rng),
        Method::Derpp => derpp_step(state, batch, cfg, rng),
    }
}

/// Fire the method's task-end hook (if any).
pub fn strategy_task_end(
    state: TrainState,
    cfg: &StrategyConfig,
    task: &Dataset,
    rng: &mut Stream,
) -> TrainState {
    match cfg.method {
        Method::Si => si_on_task_end(state, cfg),
        Method::Agem => agem_on_task_end(state, task, rng),
        Method::Fdr => fdr_on_task_end(state, task, rng),
        _ => state,
    }
}

/// Train one task: `epochs` passes over the shuffled training split in
/// `batch_size` chunks, then the task-end hook.
///
/// `shuffle_rng` drives only the epoch shuffles; `method_rng` drives replay
/// sampling and buffer bookkeeping, so strategies with inactive replay walk
/// identical parameter trajectories.
pub fn train_task(
    mut state: TrainState,
    cfg: &StrategyConfig,
    task: &Dataset,
    shuffle_rng: &mut Stream,
    method_rng: &mut Stream,
) -> Result<TrainState> {
    if task.train.is_empty() {
        return Err(Error::Dataset("task has an empty training split".into()));
    }
    let mut order: Vec<usize> = (0..task.train.len()).collect();
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        rng::shuffle(shuffle_rng, &mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = Batch {
                features: chunk
                    .iter()
                    .map(|&i| task.train[i].features.clone())
                    .collect(),
                targets: chunk
                    .iter()
                    .map(|&i| task.train[i].target.clone())
                    .collect(),
            };
            let (next, loss) = strategy_step(state, &batch, cfg, method_rng);
            state = next;
            step += 1;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    task: state.tasks_seen,
                    step,
                });
            }
        }
    }
    state = strategy_task_end(state, cfg, task, method_rng);
    state.tasks_seen += 1;
    Ok(state)
}

/// Train on the shuffled union of every task's training split in one run.
/// The union is assembled in a canonical order (ascending data seed) so the
/// result does not depend on how the tasks were presented.
pub fn joint_train(
    cfg: &StrategyConfig,
    tasks: &[Dataset],
    params: Mlp,
    shuffle_rng: &mut Stream,
    method_rng: &mut Stream,
) -> Result<Mlp> {
    if tasks.is_empty() {
        return Err(Error::Dataset(
            "joint training needs at least one task".into(),
        ));
    }
    let mut ordered: Vec<&Dataset> = tasks.iter().collect();
    ordered.sort_by_key(|t| t.seed);
    let union = Dataset {
        train: ordered
            .iter()
            .flat_map(|t| t.train.iter().cloned())
            .collect(),
        test: Vec::new(),
        seed: tasks[0].seed,
    };
    let mut cfg = cfg.clone();
    cfg.method = Method::Joint;
    let state = train_task(
        TrainState::new(params, &cfg),
        &cfg,
        &union,
        shuffle_rng,
        method_rng,
    )?;
    Ok(state.params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_dataset, DatasetSample, SystemConfig};
    use crate::nn::mse_loss;
    use crate::rng::stream;

    fn small_cfg(method: Method) -> StrategyConfig {
        StrategyConfig {
            method,
            epochs: 2,
            ..StrategyConfig::default()
        }
    }

    fn toy_net(seed: u64) -> Mlp {
        Mlp::init(&[4, 6, 6, 4], &mut stream(seed, "net", 0))
    }

    fn toy_batch(seed: u64, n: usize) -> Batch {
        let mut rng = stream(seed, "batch", 0);
        Batch {
            features: (0..n)
                .map(|_| {
                    (0..4)
                        .map(|_| rng::uniform_in(&mut rng, -1.0, 1.0))
                        .collect()
                })
                .collect(),
            targets: (0..n)
                .map(|_| {
                    (0..4)
                        .map(|_| rng::uniform_in(&mut rng, -1.0, 1.0))
                        .collect()
                })
                .collect(),
        }
    }

    fn toy_dataset(seed: u64, n: usize) -> Dataset {
        let mut rng = stream(seed, "ds", 0);
        let samples: Vec<DatasetSample> = (0..n)
            .map(|i| DatasetSample {
                features: (0..4)
                    .map(|_| rng::uniform_in(&mut rng, -1.0, 1.0))
                    .collect(),
                target: (0..4)
                    .map(|_| rng::uniform_in(&mut rng, -1.0, 1.0))
                    .collect(),
                task_value: 0.0,
                block_index: i as u64,
            })
            .collect();
        let split = n * 9 / 10;
        Dataset {
            train: samples[..split].to_vec(),
            test: samples[split..].to_vec(),
            seed,
        }
    }

    fn state_with_buffer(
        method: Method,
        seed: u64,
        entries: usize,
    ) -> (TrainState, StrategyConfig) {
        let cfg = small_cfg(method);
        let mut state = TrainState::new(toy_net(seed), &cfg);
        let mut rng = stream(seed, "fill", 0);
        for _ in 0..entries {
            let x: Vec<f64> = (0..4)
                .map(|_| rng::uniform_in(&mut rng, -1.0, 1.0))
                .collect();
            let y: Vec<f64> = (0..4)
                .map(|_| rng::uniform_in(&mut rng, -1.0, 1.0))
                .collect();
            let out = state.params.forward(&x);
            state.buffer.reservoir_insert(
                BufferEntry {
                    features: x,
                    target: Some(y),
                    stored_output: Some(out),
                    task_id: Some(0),
                },
                &mut rng,
            );
        }
        state.tasks_seen = 1;
        (state, cfg)
    }

    #[test]
    fn no_cl_is_sgd_compose_backward() {
        let cfg = small_cfg(Method::NoCl);
        let state = TrainState::new(toy_net(1), &cfg);
        let batch = toy_batch(2, 8);
        let (_, g) = backward(&state.params, &batch);
        let expected = state.params.sgd_step(&g, cfg.lr);
        let (after, _) = no_cl_step(state, &batch, cfg.lr);
        assert_eq!(after.params, expected);
        assert!(after.buffer.is_empty());
    }

    #[test]
    fn small_no_cl_steps_descend() {
        let mut ok = 0;
        for trial in 0..100 {
            let state = TrainState::new(toy_net(trial), &small_cfg(Method::NoCl));
            let batch = toy_batch(trial + 1000, 8);
            let before = backward(&state.params, &batch).0;
            let (after, _) = no_cl_step(state, &batch, 1e-3);
            let lost = backward(&after.params, &batch).0;
            if lost <= before {
                ok += 1;
            }
        }
        assert!(ok >= 99, "{ok}/100");
    }

    #[test]
    fn first_task_trajectories_match_no_cl_bitwise() {
        let ds = toy_dataset(5, 120);
        let baseline = {
            let cfg = small_cfg(Method::NoCl);
            train_task(
                TrainState::new(toy_net(9), &cfg),
                &cfg,
                &ds,
                &mut stream(77, "shuffle", 0),
                &mut stream(77, "method", 0),
            )
            .unwrap()
        };
        for method in Method::CL {
            let cfg = small_cfg(method);
            let state = train_task(
                TrainState::new(toy_net(9), &cfg),
                &cfg,
                &ds,
                &mut stream(77, "shuffle", 0),
                &mut stream(77, "method", 0),
            )
            .unwrap();
            let a = state.params.flatten();
            let b = baseline.params.flatten();
            for i in 0..a.len() {
                assert!(
                    a.0[i].to_bits() == b.0[i].to_bits(),
                    "{method:?} diverged at flat index {i}"
                );
            }
        }
    }

    #[test]
    fn si_penalty_vanishes_at_the_anchor() {
        let cfg = small_cfg(Method::Si);
        let mut state = TrainState::new(toy_net(3), &cfg);
        state.tasks_seen = 1;
        for v in state.si_omega.0.iter_mut() {
            *v = 0.7;
        }
        state.si_theta_star = state.params.flatten();
        let g = si_penalty_grad(
            &cfg,
            &state.si_omega,
            &state.params.flatten(),
            &state.si_theta_star,
        );
        assert!(g.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn si_penalty_gradient_matches_finite_differences() {
        let cfg = small_cfg(Method::Si);
        let net = toy_net(4);
        let mut rng = stream(11, "si", 0);
        let n = net.param_count();
        let mut omega = GradVector::zeros(n);
        let mut theta_star = GradVector::zeros(n);
        for k in 0..n {
            omega.0[k] = rng::uniform(&mut rng);
            theta_star.0[k] = rng::uniform_in(&mut rng, -0.5, 0.5);
        }
        let theta = net.flatten();
        let grad = si_penalty_grad(&cfg, &omega, &theta, &theta_star);
        let penalty = |t: &GradVector| -> f64 {
            (0..n)
                .map(|k| cfg.si_c * omega.0[k] * (t.0[k] - theta_star.0[k]).powi(2))
                .sum()
        };
        let h = 1e-6;
        for k in (0..n).step_by(37) {
            let mut plus = theta.clone();
            plus.0[k] += h;
            let mut minus = theta.clone();
            minus.0[k] -= h;
            let fd = (penalty(&plus) - penalty(&minus)) / (2.0 * h);
            assert!(
                (fd - grad.0[k]).abs() < 1e-8,
                "k={k}: {fd} vs {}",
                grad.0[k]
            );
        }
    }

    #[test]
    fn si_consolidation_keeps_omega_nonnegative_and_resets() {
        let cfg = small_cfg(Method::Si);
        let mut state = TrainState::new(toy_net(6), &cfg);
        let mut rng = stream(13, "w", 0);
        for k in 0..state.si_w.len() {
            state.si_w.0[k] = rng::uniform_in(&mut rng, -1.0, 1.0);
        }
        let before_theta = state.params.flatten();
        let state = si_on_task_end(state, &cfg);
        assert!(state.si_omega.0.iter().all(|&v| v >= 0.0));
        assert!(state.si_w.0.iter().all(|&v| v == 0.0));
        assert_eq!(state.si_theta_star, before_theta);
    }

    #[test]
    fn er_with_empty_buffer_matches_plain_gradient() {
        let cfg = small_cfg(Method::Er);
        let state = TrainState::new(toy_net(7), &cfg);
        let batch = toy_batch(8, 8);
        let expected = {
            let (_, g) = backward(&state.params, &batch);
            state.params.sgd_step(&g, cfg.lr)
        };
        let (after, _) = er_step(state, &batch, &cfg, &mut stream(1, "m", 0));
        assert_eq!(after.params, expected);
        // The samples still flowed into memory.
        assert_eq!(after.buffer.len(), 8);
    }

    #[test]
    fn er_combines_batches_by_sample_count() {
        let (state, cfg) = state_with_buffer(Method::Er, 21, 16);
        let batch = toy_batch(22, 8);
        let mut rng = stream(5, "m", 0);
        let mut probe = rng.clone();
        let idx = state.buffer.sample_indices(cfg.replay_batch, &mut probe);
        let replay = batch_from_entries(&state.buffer, &idx, |e| e.target.clone().unwrap());

        let (_, g_cur) = backward(&state.params, &batch);
        let (_, g_rep) = backward(&state.params, &replay);
        let n = batch.len() as f64;
        let r = replay.len() as f64;

        let mut combined = batch.clone();
        combined.features.extend(replay.features.clone());
        combined.targets.extend(replay.targets.clone());
        let (_, g_comb) = backward(&state.params, &combined);
        for k in 0..g_comb.len() {
            let weighted = (n * g_cur.0[k] + r * g_rep.0[k]) / (n + r);
            assert!((g_comb.0[k] - weighted).abs() < 1e-12);
        }

        let expected = state.params.sgd_step(&g_comb, cfg.lr);
        let (after, _) = er_step(state, &batch, &cfg, &mut rng);
        assert_eq!(after.params, expected);
    }

    #[test]
    fn buffer_never_exceeds_capacity() {
        let mut buf = ReplayBuffer::new(50);
        let mut rng = stream(31, "cap", 0);
        for i in 0..5_000 {
            buf.reservoir_insert(
                BufferEntry {
                    features: vec![i as f64],
                    target: Some(vec![0.0]),
                    stored_output: None,
                    task_id: None,
                },
                &mut rng,
            );
            assert!(buf.len() <= 50);
        }
        assert_eq!(buf.len(), 50);
        assert_eq!(buf.seen_count(), 5_000);
    }

    #[test]
    fn reservoir_retention_tracks_capacity_over_n() {
        // Insert 2000 items into capacity 100 many times; the first item's
        // retention frequency should be close to 100/2000 = 0.05.
        let trials = 2_000;
        let mut kept = 0;
        for t in 0..trials {
            let mut buf = ReplayBuffer::new(100);
            let mut rng = stream(t, "res", 0);
            for i in 0..2_000 {
                buf.reservoir_insert(
                    BufferEntry {
                        features: vec![i as f64],
                        target: None,
                        stored_output: None,
                        task_id: None,
                    },
                    &mut rng,
                );
            }
            if buf.entries().iter().any(|e| e.features[0] == 0.0) {
                kept += 1;
            }
        }
        let freq = kept as f64 / trials as f64;
        // 4-sigma band around 0.05 with 2000 trials.
        let band = 4.0 * (0.05f64 * 0.95 / trials as f64).sqrt();
        assert!((freq - 0.05).abs() < band, "freq {freq}");
    }

    #[test]
    fn projection_examples() {
        let g = GradVector(vec![1.0, 0.0]);
        let g_ref = GradVector(vec![0.0, 1.0]);
        assert_eq!(agem_project(&g, &g_ref), g);

        let g_ref = GradVector(vec![-1.0, 1.0]);
        let p = agem_project(&g, &g_ref);
        assert!((p.0[0] - 0.5).abs() < 1e-15);
        assert!((p.0[1] - 0.5).abs() < 1e-15);
        assert!(p.dot(&g_ref).abs() < 1e-15);

        // Degenerate reference with conflicting sign cannot occur with real
        // memory gradients; it falls through unchanged.
        let z = GradVector(vec![0.0, 0.0]);
        assert_eq!(agem_project(&g, &z), g);
    }

    #[test]
    fn projection_never_conflicts() {
        let mut rng = stream(41, "proj", 0);
        for _ in 0..2_000 {
            let dim = 1 + rng::index(&mut rng, 64);
            let mut g = GradVector::zeros(dim);
            let mut g_ref = GradVector::zeros(dim);
            for k in 0..dim {
                let (a, b) = rng::normal_pair(&mut rng);
                g.0[k] = a;
                g_ref.0[k] = b;
            }
            let p = agem_project(&g, &g_ref);
            assert!(p.dot(&g_ref) >= -1e-10);
            if g.dot(&g_ref) >= 0.0 {
                assert_eq!(p, g);
            }
        }
    }

    #[test]
    fn agem_buffer_only_changes_at_boundaries() {
        let (state, cfg) = state_with_buffer(Method::Agem, 43, 30);
        let snapshot = state.buffer.clone();
        let batch = toy_batch(44, 8);
        let (after, _) = agem_step(state, &batch, &cfg, &mut stream(3, "m", 0));
        assert_eq!(after.buffer, snapshot);
    }

    #[test]
    fn agem_boundary_shares_are_equal() {
        let cfg = small_cfg(Method::Agem);
        let mut state = TrainState::new(toy_net(45), &cfg);
        let mut rng = stream(46, "b", 0);
        for round in 0..3 {
            let ds = toy_dataset(100 + round, 400);
            state = agem_on_task_end(state, &ds, &mut rng);
            state.tasks_seen += 1;
            let share = cfg.buffer_capacity / state.tasks_seen;
            for t in 0..state.tasks_seen {
                let count = state
                    .buffer
                    .entries()
                    .iter()
                    .filter(|e| e.task_id == Some(t))
                    .count();
                assert_eq!(count, share, "task {t} after round {round}");
            }
            assert!(state.buffer.len() <= cfg.buffer_capacity);
        }
    }

    #[test]
    fn agem_projection_removes_memory_conflict() {
        let (state, cfg) = state_with_buffer(Method::Agem, 47, 40);
        let batch = toy_batch(48, 8);
        let mut rng = stream(7, "m", 0);
        let mut probe = rng.clone();
        let idx = state.buffer.sample_indices(cfg.replay_batch, &mut probe);
        let replay = batch_from_entries(&state.buffer, &idx, |e| e.target.clone().unwrap());
        let (_, g) = backward(&state.params, &batch);
        let (_, g_ref) = backward(&state.params, &replay);
        let projected = agem_project(&g, &g_ref);
        // Directional derivative of the memory loss along -projected.
        assert!(-projected.dot(&g_ref) <= 1e-10);
        let expected = state.params.sgd_step(&projected, cfg.lr);
        let (after, _) = agem_step(state, &batch, &cfg, &mut rng);
        assert_eq!(after.params, expected);
    }

    #[test]
    fn agem_r_fills_reservoir_without_boundaries() {
        let cfg = small_cfg(Method::AgemR);
        let mut state = TrainState::new(toy_net(51), &cfg);
        let mut rng = stream(52, "m", 0);
        for i in 0..40 {
            let batch = toy_batch(60 + i, 8);
            let (next, _) = agem_r_step(state, &batch, &cfg, &mut rng);
            state = next;
        }
        assert_eq!(state.buffer.len(), cfg.buffer_capacity.min(320));
        // No hook for reservoir methods.
        let ds = toy_dataset(53, 100);
        let before = state.buffer.clone();
        let state = strategy_task_end(state, &cfg, &ds, &mut rng);
        assert_eq!(state.buffer, before);
    }

    #[test]
    fn fdr_empty_buffer_is_plain_sgd() {
        let cfg = small_cfg(Method::Fdr);
        let state = TrainState::new(toy_net(55), &cfg);
        let batch = toy_batch(56, 8);
        let expected = {
            let (_, g) = backward(&state.params, &batch);
            state.params.sgd_step(&g, cfg.lr)
        };
        let (after, _) = fdr_step(state, &batch, &cfg, &mut stream(1, "m", 0));
        assert_eq!(after.params, expected);
    }

    #[test]
    fn fdr_alignment_is_zero_right_after_storage() {
        let cfg = small_cfg(Method::Fdr);
        let state = TrainState::new(toy_net(57), &cfg);
        let ds = toy_dataset(58, 300);
        let state = fdr_on_task_end(state, &ds, &mut stream(59, "m", 0));
        for e in state.buffer.entries() {
            let out = state.params.forward(&e.features);
            let stored = e.stored_output.as_ref().unwrap();
            assert_eq!(&out, stored);
            assert_eq!(mse_loss(&out, stored), 0.0);
            assert!(e.target.is_none());
        }
        assert_eq!(state.buffer.len(), cfg.buffer_capacity);
    }

    #[test]
    fn der_disabled_penalty_matches_no_cl() {
        let (state, mut cfg) = state_with_buffer(Method::Der, 61, 30);
        cfg.der_alpha = 0.0;
        let batch = toy_batch(62, 8);
        let expected = {
            let (_, g) = backward(&state.params, &batch);
            state.params.sgd_step(&g, cfg.lr)
        };
        let (after, _) = der_step(state, &batch, &cfg, &mut stream(2, "m", 0));
        assert_eq!(after.params, expected);
    }

    #[test]
    fn der_buffer_holds_outputs_never_targets() {
        let cfg = small_cfg(Method::Der);
        let mut state = TrainState::new(toy_net(63), &cfg);
        let mut rng = stream(64, "m", 0);
        let batch = toy_batch(65, 8);
        let (next, _) = der_step(state, &batch, &cfg, &mut rng);
        state = next;
        assert_eq!(state.buffer.len(), 8);
        for e in state.buffer.entries() {
            assert!(e.target.is_none());
            let stored = e.stored_output.as_ref().unwrap();
            // Frozen network: freshly inserted points align exactly.
            assert_eq!(stored, &state.params.forward(&e.features));
        }
    }

    #[test]
    fn derpp_reduces_to_der_and_to_no_cl() {
        let batch = toy_batch(71, 8);
        {
            let (state, mut cfg) = state_with_buffer(Method::Derpp, 70, 30);
            cfg.derpp_beta = 0.0;
            let (via_der, _) = der_step(state.clone(), &batch, &cfg, &mut stream(3, "m", 0));
            let (via_derpp, _) = derpp_step(state, &batch, &cfg, &mut stream(3, "m", 0));
            assert_eq!(via_der.params, via_derpp.params);
        }
        {
            let (state, mut cfg) = state_with_buffer(Method::Derpp, 72, 30);
            cfg.der_alpha = 0.0;
            cfg.derpp_beta = 0.0;
            let expected = {
                let (_, g) = backward(&state.params, &batch);
                state.params.sgd_step(&g, cfg.lr)
            };
            let (after, _) = derpp_step(state, &batch, &cfg, &mut stream(4, "m", 0));
            assert_eq!(after.params, expected);
        }
    }

    #[test]
    fn derpp_gradient_is_sum_of_three_terms() {
        let (state, cfg) = state_with_buffer(Method::Derpp, 73, 40);
        let batch = toy_batch(74, 8);
        let mut probe = stream(9, "m", 0);
        let idx1 = state.buffer.sample_indices(cfg.replay_batch, &mut probe);
        let idx2 = state.buffer.sample_indices(cfg.replay_batch, &mut probe);
        let replay_out =
            batch_from_entries(&state.buffer, &idx1, |e| e.stored_output.clone().unwrap());
        let replay_gt = batch_from_entries(&state.buffer, &idx2, |e| e.target.clone().unwrap());

        let (_, g0) = backward(&state.params, &batch);
        let (_, g1) = backward(&state.params, &replay_out);
        let (_, g2) = backward(&state.params, &replay_gt);
        let mut total = g0.clone();
        total.add_scaled(cfg.der_alpha, &g1);
        total.add_scaled(cfg.derpp_beta, &g2);

        // Each term checked against central finite differences.
        let dims = state.params.dims().to_vec();
        let flat = state.params.flatten();
        let h = 1e-6;
        let mut rng = stream(75, "fd", 0);
        for (g_term, b) in [(&g0, &batch), (&g1, &replay_out), (&g2, &replay_gt)] {
            for _ in 0..8 {
                let k = rng::index(&mut rng, flat.len());
                let mut plus = flat.clone();
                plus.0[k] += h;
                let mut minus = flat.clone();
                minus.0[k] -= h;
                let lp = backward(&Mlp::unflatten(&dims, &plus).unwrap(), b).0;
                let lm = backward(&Mlp::unflatten(&dims, &minus).unwrap(), b).0;
                let fd = (lp - lm) / (2.0 * h);
                assert!((fd - g_term.0[k]).abs() < 1e-8, "{fd} vs {}", g_term.0[k]);
            }
        }

        let expected = state.params.sgd_step(&total, cfg.lr);
        let (after, _) = derpp_step(state, &batch, &cfg, &mut stream(9, "m", 0));
        assert_eq!(after.params, expected);
    }

    #[test]
    fn train_task_with_zero_epochs_only_fires_the_hook() {
        let mut cfg = small_cfg(Method::Si);
        cfg.epochs = 0;
        let ds = toy_dataset(81, 100);
        let before = TrainState::new(toy_net(80), &cfg);
        let params_before = before.params.clone();
        let after = train_task(
            before,
            &cfg,
            &ds,
            &mut stream(1, "s", 0),
            &mut stream(1, "m", 0),
        )
        .unwrap();
        assert_eq!(after.params, params_before);
        assert_eq!(after.tasks_seen, 1);
        assert_eq!(after.si_theta_star, params_before.flatten());
    }

    #[test]
    fn train_task_is_deterministic() {
        let cfg = small_cfg(Method::Derpp);
        let ds = toy_dataset(83, 150);
        let run = || {
            train_task(
                TrainState::new(toy_net(82), &cfg),
                &cfg,
                &ds,
                &mut stream(2, "s", 0),
                &mut stream(2, "m", 0),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.params, b.params);
        assert_eq!(a.buffer, b.buffer);
    }

    #[test]
    fn joint_on_one_task_equals_no_cl() {
        let cfg = small_cfg(Method::NoCl);
        let ds = generate_dataset(&SystemConfig::default(), 5, 300, 10.0).unwrap();
        let init = Mlp::init(
            &crate::nn::dims_for_system(&SystemConfig::default()),
            &mut stream(3, "i", 0),
        );
        let sequential = train_task(
            TrainState::new(init.clone(), &cfg),
            &cfg,
            &ds,
            &mut stream(4, "s", 0),
            &mut stream(4, "m", 0),
        )
        .unwrap();
        let joint = joint_train(
            &cfg,
            std::slice::from_ref(&ds),
            init,
            &mut stream(4, "s", 0),
            &mut stream(4, "m", 0),
        )
        .unwrap();
        assert_eq!(joint, sequential.params);
    }

    #[test]
    fn joint_union_size_is_the_sum() {
        let tasks: Vec<Dataset> = (0..3).map(|i| toy_dataset(90 + i, 100)).collect();
        let union_len: usize = tasks.iter().map(|t| t.train.len()).sum();
        let union = Dataset {
            train: tasks.iter().flat_map(|t| t.train.iter().cloned()).collect(),
            test: Vec::new(),
            seed: 0,
        };
        assert_eq!(union.train.len(), union_len);
    }

    #[test]
    fn method_names_parse_roundtrip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.key()).unwrap(), m);
            assert_eq!(Method::parse(m.display()).unwrap(), m);
        }
        assert!(Method::parse("ewc").is_err());
    }
}
