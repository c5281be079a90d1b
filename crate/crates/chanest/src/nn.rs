//! Minimal fully-connected regression network with exact reverse-mode
//! gradients, MSE loss and plain SGD, all in f64.
//!
//! Parameters expose a flat view in a fixed canonical order (layer 0 weights
//! row-major, layer 0 biases, layer 1 weights, ...) so that projection and
//! regularization algebra can treat the whole network as one vector.

use serde::{Deserialize, Serialize};

use crate::channel::SystemConfig;
use crate::rng::{self, Stream};
use crate::{Error, Result};

/// Flat parameter-sized vector in canonical layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradVector(pub Vec<f64>);

impl GradVector {
    pub fn zeros(len: usize) -> Self {
        GradVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, other: &GradVector) -> f64 {
        assert_eq!(self.len(), other.len(), "dot length mismatch");
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// self += scale * other
    pub fn add_scaled(&mut self, scale: f64, other: &GradVector) {
        assert_eq!(self.len(), other.len(), "add_scaled length mismatch");
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Fully-connected network: affine + ReLU through the hidden layers, affine
/// output. `dims` lists the layer widths input-first.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    /// Per layer, row-major out x in.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Reusable activation buffers for [`Mlp::forward_with`].
#[derive(Debug, Clone)]
pub struct ForwardScratch {
    acts: Vec<Vec<f64>>,
}

impl ForwardScratch {
    pub fn for_net(net: &Mlp) -> Self {
        ForwardScratch {
            acts: net.dims.iter().map(|&d| vec![0.0; d]).collect(),
        }
    }
}

/// Mini-batch of rows; features and targets are parallel.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Layer widths for the estimator attached to a system: 2N inputs, five
/// hidden layers of 3M ReLU units, 2N outputs (stacked real/imaginary
/// channel row).
pub fn dims_for_system(cfg: &SystemConfig) -> Vec<usize> {
    let io = 2 * cfg.n_tx;
    let hidden = 3 * cfg.m_rx;
    vec![io, hidden, hidden, hidden, hidden, hidden, io]
}

impl Mlp {
    /// He-style uniform init: weights in +/- sqrt(6 / fan_in), biases zero.
    pub fn init(dims: &[usize], rng: &mut Stream) -> Mlp {
        assert!(dims.len() >= 2, "need at least input and output widths");
        assert!(dims.iter().all(|&d| d > 0), "zero-width layer");
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let mut w = vec![0.0; fan_out * fan_in];
            for v in w.iter_mut() {
                *v = rng::uniform_in(rng, -bound, bound);
            }
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Mlp {
            dims: dims.to_vec(),
            weights,
            biases,
        }
    }

    pub fn zeros(dims: &[usize]) -> Mlp {
        assert!(dims.len() >= 2);
        let weights = (0..dims.len() - 1)
            .map(|l| vec![0.0; dims[l + 1] * dims[l]])
            .collect();
        let biases = (0..dims.len() - 1)
            .map(|l| vec![0.0; dims[l + 1]])
            .collect();
        Mlp {
            dims: dims.to_vec(),
            weights,
            biases,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn layer_weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn layer_weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }

    pub fn layer_biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Affine -> ReLU through the hidden layers, affine output.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut scratch = ForwardScratch::for_net(self);
        self.forward_with(x, &mut scratch).to_vec()
    }

    /// Allocation-free forward pass into a reusable scratch buffer.
    pub fn forward_with<'s>(&self, x: &[f64], scratch: &'s mut ForwardScratch) -> &'s [f64] {
        assert_eq!(x.len(), self.input_dim(), "input width mismatch");
        assert_eq!(
            scratch.acts.len(),
            self.dims.len(),
            "scratch shape mismatch"
        );
        scratch.acts[0].copy_from_slice(x);
        for l in 0..self.n_layers() {
            let (w, b) = (&self.weights[l], &self.biases[l]);
            let n_in = self.dims[l];
            let (before, after) = scratch.acts.split_at_mut(l + 1);
            let prev = &before[l];
            let next = &mut after[0];
            let last = l + 1 == self.n_layers();
            for (o, out) in next.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut acc = b[o];
                for (wi, xi) in row.iter().zip(prev) {
                    acc += wi * xi;
                }
                *out = if last { acc } else { acc.max(0.0) };
            }
        }
        scratch.acts.last().unwrap()
    }

    /// Flatten into the canonical order (weights then biases per layer).
    pub fn flatten(&self) -> GradVector {
        let mut out = Vec::with_capacity(self.param_count());
        for l in 0..self.n_layers() {
            out.extend_from_slice(&self.weights[l]);
            out.extend_from_slice(&self.biases[l]);
        }
        GradVector(out)
    }

    /// Inverse of [`Mlp::flatten`] for the given layer widths.
    pub fn unflatten(dims: &[usize], flat: &GradVector) -> Result<Mlp> {
        let mut net = Mlp::zeros(dims);
        if flat.len() != net.param_count() {
            return Err(Error::Shape(format!(
                "flat vector has {} entries, network needs {}",
                flat.len(),
                net.param_count()
            )));
        }
        let mut at = 0;
        for l in 0..net.n_layers() {
            let wl = net.weights[l].len();
            net.weights[l].copy_from_slice(&flat.0[at..at + wl]);
            at += wl;
            let bl = net.biases[l].len();
            net.biases[l].copy_from_slice(&flat.0[at..at + bl]);
            at += bl;
        }
        Ok(net)
    }

    /// theta <- theta - lr * g in canonical order.
    pub fn sgd_step(&self, grad: &GradVector, lr: f64) -> Mlp {
        assert!(lr > 0.0, "learning rate must be positive");
        assert_eq!(grad.len(), self.param_count(), "gradient length mismatch");
        let mut out = self.clone();
        let mut at = 0;
        for l in 0..out.n_layers() {
            for v in out.weights[l].iter_mut() {
                *v -= lr * grad.0[at];
                at += 1;
            }
            for v in out.biases[l].iter_mut() {
                *v -= lr * grad.0[at];
                at += 1;
            }
        }
        out
    }
}

/// Mean of squared componentwise differences.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len(), "loss width mismatch");
    let n = pred.len() as f64;
    pred.iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n
}

/// Batch-mean MSE and its exact gradient in canonical flat order.
///
/// All scratch buffers are allocated once per call and reused across the
/// batch; this loop is the hot path of every training strategy.
pub fn backward(params: &Mlp, batch: &Batch) -> (f64, GradVector) {
    assert!(!batch.is_empty(), "backward over an empty batch");
    assert_eq!(batch.features.len(), batch.targets.len());
    let n_layers = params.n_layers();
    let batch_n = batch.len() as f64;
    let out_dim = params.output_dim() as f64;

    let mut grad_w: Vec<Vec<f64>> = params.weights.iter().map(|w| vec![0.0; w.len()]).collect();
    let mut grad_b: Vec<Vec<f64>> = params.biases.iter().map(|b| vec![0.0; b.len()]).collect();
    let mut loss = 0.0;

    let max_width = *params.dims.iter().max().unwrap();
    let mut acts: Vec<Vec<f64>> = params.dims.iter().map(|&d| vec![0.0; d]).collect();
    let mut delta = vec![0.0; max_width];
    let mut delta_prev = vec![0.0; max_width];

    for (x, t) in batch.features.iter().zip(&batch.targets) {
        assert_eq!(x.len(), params.input_dim(), "feature width mismatch");
        assert_eq!(t.len(), params.output_dim(), "target width mismatch");
        acts[0].copy_from_slice(x);
        for l in 0..n_layers {
            let (w, b) = (&params.weights[l], &params.biases[l]);
            let n_in = params.dims[l];
            let (before, after) = acts.split_at_mut(l + 1);
            let prev = &before[l];
            let next = &mut after[0];
            let last = l + 1 == n_layers;
            for (o, out) in next.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut acc = b[o];
                for (wi, xi) in row.iter().zip(prev) {
                    acc += wi * xi;
                }
                *out = if last { acc } else { acc.max(0.0) };
            }
        }

        let pred = &acts[n_layers];
        loss += mse_loss(pred, t);

        // d(batch loss)/d(pred_j) = 2 (pred_j - t_j) / (out_dim * batch_n)
        for ((d, p), y) in delta.iter_mut().zip(pred).zip(t) {
            *d = 2.0 * (p - y) / (out_dim * batch_n);
        }

        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (params.dims[l], params.dims[l + 1]);
            let prev = &acts[l];
            let gw = &mut grad_w[l];
            let gb = &mut grad_b[l];
            for o in 0..n_out {
                let d = delta[o];
                gb[o] += d;
                let row = &mut gw[o * n_in..(o + 1) * n_in];
                for (gwi, xi) in row.iter_mut().zip(prev) {
                    *gwi += d * xi;
                }
            }
            if l > 0 {
                let w = &params.weights[l];
                delta_prev[..n_in].fill(0.0);
                for o in 0..n_out {
                    let d = delta[o];
                    let row = &w[o * n_in..(o + 1) * n_in];
                    for (pd, wi) in delta_prev[..n_in].iter_mut().zip(row) {
                        *pd += d * wi;
                    }
                }
                // ReLU mask from the post-activation (positive iff the
                // pre-activation was).
                for (pd, a) in delta_prev[..n_in].iter_mut().zip(prev) {
                    if *a <= 0.0 {
                        *pd = 0.0;
                    }
                }
                std::mem::swap(&mut delta, &mut delta_prev);
            }
        }
    }

    let mut flat = Vec::with_capacity(params.param_count());
    for l in 0..n_layers {
        flat.extend_from_slice(&grad_w[l]);
        flat.extend_from_slice(&grad_b[l]);
    }
    (loss / batch_n, GradVector(flat))
}
