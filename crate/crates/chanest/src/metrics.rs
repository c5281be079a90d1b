//! Task-by-task error matrix and the three transfer metrics.
//!
//! `e[i][j]` is the test MSE on task `j` (in presentation order) recorded
//! immediately after task `i` finished training; `b_bar[j]` is the same
//! evaluation for the randomly initialized model before any training. Every
//! evaluation pass covers all tasks, learned or not, because the forward
//! transfer reads the error on a task one step before it is learned.

use serde::{Deserialize, Serialize};

use crate::channel::Dataset;
use crate::nn::{mse_loss, Mlp};

/// The full record a sequential run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMatrix {
    pub t: usize,
    /// T rows of T entries; row i recorded after task i.
    pub e: Vec<Vec<f64>>,
    /// Random-initialization error on each task.
    pub b_bar: Vec<f64>,
}

impl ErrorMatrix {
    pub fn new(t: usize, b_bar: Vec<f64>) -> Self {
        assert_eq!(b_bar.len(), t);
        ErrorMatrix {
            t,
            e: Vec::with_capacity(t),
            b_bar,
        }
    }

    pub fn push_row(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.t, "row width mismatch");
        assert!(self.e.len() < self.t, "matrix already complete");
        self.e.push(row);
    }

    pub fn is_complete(&self) -> bool {
        self.e.len() == self.t
    }
}

/// Mean test MSE of `params` on every task's test split, in the given order.
pub fn eval_row(params: &Mlp, tasks: &[Dataset]) -> Vec<f64> {
    let mut scratch = crate::nn::ForwardScratch::for_net(params);
    tasks
        .iter()
        .map(|task| {
            let mut acc = 0.0;
            for s in &task.test {
                acc += mse_loss(params.forward_with(&s.features, &mut scratch), &s.target);
            }
            acc / task.test.len() as f64
        })
        .collect()
}

/// Mean of the last row: the final error over all tasks.
pub fn avg_mse(m: &ErrorMatrix) -> f64 {
    assert!(m.is_complete(), "error matrix incomplete");
    let last = &m.e[m.t - 1];
    last.iter().sum::<f64>() / m.t as f64
}

/// Mean zero-shot gain over the random-init baseline:
/// `(1/(T-1)) * sum_{i=2..T} (b_bar_i - e_{i-1,i})`.
pub fn fwt(m: &ErrorMatrix) -> f64 {
    assert!(m.is_complete(), "error matrix incomplete");
    if m.t < 2 {
        return 0.0;
    }
    let sum: f64 = (1..m.t).map(|i| m.b_bar[i] - m.e[i - 1][i]).sum();
    sum / (m.t - 1) as f64
}

/// Mean growth of earlier-task error after the full sequence:
/// `(1/(T-1)) * sum_{i=1..T-1} (e_{T,i} - e_{i,i})`. Positive values mean
/// forgetting under the MSE convention.
pub fn bwt(m: &ErrorMatrix) -> f64 {
    assert!(m.is_complete(), "error matrix incomplete");
    if m.t < 2 {
        return 0.0;
    }
    let last = &m.e[m.t - 1];
    let sum: f64 = (0..m.t - 1).map(|i| last[i] - m.e[i][i]).sum();
    sum / (m.t - 1) as f64
}
