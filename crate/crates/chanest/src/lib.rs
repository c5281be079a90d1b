//! Continual-learning benchmark for Gauss-Markov MIMO channel estimation.
//!
//! A small fully-connected estimator is trained sequentially on task
//! sequences that vary the SNR level or the coherence time of a block-fading
//! MIMO link, under nine training strategies (sequential SGD, joint
//! training, an importance penalty, and six replay/projection variants).
//! Runs record a task-by-task error matrix from which average MSE, forward
//! transfer and backward transfer are computed, and a CLI orchestrates
//! dataset generation, single runs, multi-seed sweeps, report tables and
//! received-power histograms.

pub mod channel;
pub mod cli;
pub mod dataset_io;
pub mod fig2;
pub mod metrics;
pub mod nn;
pub mod protocol;
pub mod report;
pub mod rng;
pub mod runner;
pub mod strategies;
pub mod sweep;

mod error;

pub use error::{Error, Result};
