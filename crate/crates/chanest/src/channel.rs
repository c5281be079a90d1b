//! Gauss-Markov Rayleigh block-fading MIMO simulator.
//!
//! A transmission is a sequence of time blocks. Within block `b` the channel
//! `H_b` (M x N complex) is constant; between blocks it evolves as the
//! first-order walk `H_b = sqrt(alpha) H_{b-1} + sqrt(1-alpha) W_b` with
//! `W_b` drawn entrywise from CN(0, 1), so the marginal stays unit-variance
//! for any memory factor in [0, 1). Each block carries K pilot symbol
//! vectors (cyclic extension of a fixed 2-PAM base sequence), and the
//! received block is `Y = H X + noise` with per-entry complex noise variance
//! `sigma^2` calibrated from the SNR level.
//!
//! The supervised dataset pairs each receive antenna's row of the averaged
//! correlation statistic `Z = Y X^T / K` with the same row of `H`. Averaging
//! over K pilot columns shrinks the noise in `Z` like `sigma^2 / K`, which is
//! what makes the coherence time a task-difficulty axis with a fixed input
//! dimension.

use serde::{Deserialize, Serialize};

use crate::rng::{self, Stream};
use crate::{Error, Result};

/// Physical and simulation parameters for one task's data generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// Transmit antennas (N).
    pub n_tx: usize,
    /// Receive antennas (M).
    pub m_rx: usize,
    /// SNR level in dB (rho).
    pub snr_db: f64,
    /// Channel memory factor in [0, 1).
    pub alpha: f64,
    /// Symbol periods per block (T_c = K).
    pub coherence_symbols: usize,
    /// Base 2-PAM pilot sequence length (P).
    pub pilot_len: usize,
    /// Carrier frequency in Hz; only enters the absolute-power gain report.
    pub carrier_freq_hz: f64,
    /// Path-loss exponent; only enters the absolute-power gain report.
    pub pathloss_exp: f64,
    /// Transmitter-receiver distance in meters.
    pub distance_m: f64,
    /// Default number of blocks for power histograms.
    pub n_blocks: usize,
    /// Seed for the shared pilot sequence.
    pub pilot_seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            n_tx: 8,
            m_rx: 5,
            snr_db: 10.0,
            alpha: 0.01,
            coherence_symbols: 20,
            pilot_len: 10,
            carrier_freq_hz: 3.0e9,
            pathloss_exp: 2.5,
            distance_m: 20.0,
            n_blocks: 4000,
            pilot_seed: 7,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tx < 1 {
            return Err(Error::Config("n_tx must be >= 1".into()));
        }
        if self.m_rx < 1 {
            return Err(Error::Config("m_rx must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 1), got {}",
                self.alpha
            )));
        }
        if self.coherence_symbols < 1 {
            return Err(Error::Config("coherence_symbols must be >= 1".into()));
        }
        if self.pilot_len < 1 {
            return Err(Error::Config("pilot_len must be >= 1".into()));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::Config("snr_db must be finite".into()));
        }
        Ok(())
    }

    /// Large-scale gain implied by carrier frequency, distance and path-loss
    /// exponent. Not applied to training data (it cancels in the SNR
    /// definition); reported alongside absolute powers only.
    pub fn pathloss_gain(&self) -> f64 {
        const C: f64 = 299_792_458.0;
        let wavelength_term = C / (4.0 * std::f64::consts::PI * self.carrier_freq_hz);
        wavelength_term * wavelength_term * self.distance_m.powf(-self.pathloss_exp)
    }
}

/// N x K matrix of +/-1 pilot symbols, identical for every block of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotMatrix {
    pub n_tx: usize,
    pub k: usize,
    /// Row-major N x K entries, each exactly -1.0 or +1.0.
    pub symbols: Vec<f64>,
}

impl PilotMatrix {
    #[inline]
    pub fn at(&self, n: usize, k: usize) -> f64 {
        self.symbols[n * self.k + k]
    }

    /// Column k as a slice-free copy.
    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.n_tx).map(|n| self.at(n, k)).collect()
    }
}

/// M x N complex matrix stored as split real/imaginary buffers (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    pub m_rx: usize,
    pub n_tx: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ChannelMatrix {
    pub fn zeros(m_rx: usize, n_tx: usize) -> Self {
        ChannelMatrix {
            m_rx,
            n_tx,
            re: vec![0.0; m_rx * n_tx],
            im: vec![0.0; m_rx * n_tx],
        }
    }

    #[inline]
    fn idx(&self, m: usize, n: usize) -> usize {
        m * self.n_tx + n
    }

    pub fn entry(&self, m: usize, n: usize) -> (f64, f64) {
        let i = self.idx(m, n);
        (self.re[i], self.im[i])
    }

    /// Row `m` stacked as [re_1..re_N, im_1..im_N].
    pub fn row_stacked(&self, m: usize) -> Vec<f64> {
        let base = m * self.n_tx;
        let mut out = Vec::with_capacity(2 * self.n_tx);
        out.extend_from_slice(&self.re[base..base + self.n_tx]);
        out.extend_from_slice(&self.im[base..base + self.n_tx]);
        out
    }
}

/// M x K complex received block, same layout as [`ChannelMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedBlock {
    pub m_rx: usize,
    pub k: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ReceivedBlock {
    /// Total received power of the block, sum over all K columns.
    pub fn power(&self) -> f64 {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| r * r + i * i)
            .sum()
    }
}

/// One supervised example: a receive antenna's row of the block statistic
/// paired with the matching channel row, both stacked [real; imag].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSample {
    pub features: Vec<f64>,
    pub target: Vec<f64>,
    pub task_value: f64,
    pub block_index: u64,
}

/// A task's train/test split, fully reproducible from (config, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub train: Vec<DatasetSample>,
    pub test: Vec<DatasetSample>,
    pub seed: u64,
}

impl Dataset {
    pub fn feature_dim(&self) -> usize {
        self.train
            .first()
            .or_else(|| self.test.first())
            .map_or(0, |s| s.features.len())
    }
}

/// Draw the base N x P pilot block from the pilot seed and extend it
/// cyclically to K columns (truncating when K < P).
pub fn make_pilots(cfg: &SystemConfig) -> PilotMatrix {
    let mut rng = rng::stream(cfg.pilot_seed, "pilots", 0);
    let (n, p, k) = (cfg.n_tx, cfg.pilot_len, cfg.coherence_symbols);
    let mut base = vec![0.0; n * p];
    for v in base.iter_mut() {
        *v = if rng::uniform(&mut rng) < 0.5 {
            -1.0
        } else {
            1.0
        };
    }
    let mut symbols = vec![0.0; n * k];
    for row in 0..n {
        for col in 0..k {
            symbols[row * k + col] = base[row * p + col % p];
        }
    }
    PilotMatrix {
        n_tx: n,
        k,
        symbols,
    }
}

/// Fresh channel with entries drawn iid CN(0, 1): real and imaginary parts
/// each N(0, 1/2).
pub fn init_channel(m_rx: usize, n_tx: usize, rng: &mut Stream) -> ChannelMatrix {
    let mut h = ChannelMatrix::zeros(m_rx, n_tx);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..m_rx * n_tx {
        let (a, b) = rng::normal_pair(rng);
        h.re[i] = scale * a;
        h.im[i] = scale * b;
    }
    h
}

/// One step of the channel walk with an explicit innovation matrix.
/// Separated from [`step_channel`] so the deterministic algebra is testable
/// with a chosen `w`.
pub fn step_channel_with_noise(
    h_prev: &ChannelMatrix,
    alpha: f64,
    w: &ChannelMatrix,
) -> ChannelMatrix {
    assert_eq!(h_prev.m_rx, w.m_rx);
    assert_eq!(h_prev.n_tx, w.n_tx);
    let keep = alpha.sqrt();
    let inject = (1.0 - alpha).sqrt();
    let mut out = ChannelMatrix::zeros(h_prev.m_rx, h_prev.n_tx);
    for i in 0..out.re.len() {
        out.re[i] = keep * h_prev.re[i] + inject * w.re[i];
        out.im[i] = keep * h_prev.im[i] + inject * w.im[i];
    }
    out
}

/// Advance the channel one block: `sqrt(alpha) H + sqrt(1-alpha) W`,
/// `W ~ CN(0, 1)` entrywise.
pub fn step_channel(h_prev: &ChannelMatrix, alpha: f64, rng: &mut Stream) -> ChannelMatrix {
    let w = init_channel(h_prev.m_rx, h_prev.n_tx, rng);
    step_channel_with_noise(h_prev, alpha, &w)
}

/// Per-entry complex noise variance at the configured SNR:
/// `sigma^2 = E[||H x||^2] * 10^(-rho/10)`, the expectation taken over the
/// unit-variance channel and uniformly over pilot columns. For +/-1 pilots
/// the closed form is `M * N * 10^(-rho/10)`.
pub fn noise_variance(cfg: &SystemConfig, pilots: &PilotMatrix) -> f64 {
    let mut mean_col_energy = 0.0;
    for k in 0..pilots.k {
        let mut e = 0.0;
        for n in 0..pilots.n_tx {
            let x = pilots.at(n, k);
            e += x * x;
        }
        mean_col_energy += e;
    }
    mean_col_energy /= pilots.k as f64;
    cfg.m_rx as f64 * mean_col_energy * 10f64.powf(-cfg.snr_db / 10.0)
}

/// Receive one block: column k is `H x_k + n_k` with `n_k` iid CN(0, sigma^2)
/// per entry; the channel is held fixed for all K columns.
pub fn receive_block(
    h: &ChannelMatrix,
    pilots: &PilotMatrix,
    sigma2: f64,
    rng: &mut Stream,
) -> ReceivedBlock {
    assert_eq!(h.n_tx, pilots.n_tx, "channel/pilot dimension mismatch");
    assert!(sigma2 >= 0.0);
    let (m_rx, k) = (h.m_rx, pilots.k);
    let mut out = ReceivedBlock {
        m_rx,
        k,
        re: vec![0.0; m_rx * k],
        im: vec![0.0; m_rx * k],
    };
    let noise_scale = (sigma2 / 2.0).sqrt();
    for col in 0..k {
        for m in 0..m_rx {
            let mut acc_re = 0.0;
            let mut acc_im = 0.0;
            for n in 0..h.n_tx {
                let x = pilots.at(n, col);
                let (hr, hi) = h.entry(m, n);
                acc_re += hr * x;
                acc_im += hi * x;
            }
            let (nr, ni) = rng::normal_pair(rng);
            out.re[m * k + col] = acc_re + noise_scale * nr;
            out.im[m * k + col] = acc_im + noise_scale * ni;
        }
    }
    out
}

/// Averaged correlation statistic `Z = Y X^T / K` (M x N complex). The pilot
/// Gram maps the channel through a fixed matrix while the noise contribution
/// to each entry has variance `sigma^2 / K`.
pub fn block_statistic(y: &ReceivedBlock, pilots: &PilotMatrix) -> ChannelMatrix {
    assert_eq!(y.k, pilots.k, "received block/pilot length mismatch");
    let (m_rx, n_tx, k) = (y.m_rx, pilots.n_tx, y.k);
    let mut z = ChannelMatrix::zeros(m_rx, n_tx);
    let inv_k = 1.0 / k as f64;
    for m in 0..m_rx {
        for n in 0..n_tx {
            let mut acc_re = 0.0;
            let mut acc_im = 0.0;
            for col in 0..k {
                let x = pilots.at(n, col);
                acc_re += y.re[m * k + col] * x;
                acc_im += y.im[m * k + col] * x;
            }
            let i = m * n_tx + n;
            z.re[i] = acc_re * inv_k;
            z.im[i] = acc_im * inv_k;
        }
    }
    z
}

/// Run the block-fading chain long enough to cut `n_samples` examples (one
/// per receive antenna per block), shuffle and split 90/10.
///
/// `task_value` records the generating task parameter (the SNR level or the
/// coherence time) on every sample.
pub fn generate_dataset(
    cfg: &SystemConfig,
    seed: u64,
    n_samples: usize,
    task_value: f64,
) -> Result<Dataset> {
    cfg.validate()?;
    if n_samples < cfg.m_rx {
        return Err(Error::Dataset(format!(
            "n_samples {} is below m_rx {}; cannot form one block",
            n_samples, cfg.m_rx
        )));
    }
    let pilots = make_pilots(cfg);
    let sigma2 = noise_variance(cfg, &pilots);
    let blocks = n_samples.div_ceil(cfg.m_rx);

    let mut chan_rng = rng::stream(seed, "channel", 0);
    let mut noise_rng = rng::stream(seed, "noise", 0);

    let mut samples = Vec::with_capacity(blocks * cfg.m_rx);
    let mut h = init_channel(cfg.m_rx, cfg.n_tx, &mut chan_rng);
    for b in 0..blocks {
        if b > 0 {
            h = step_channel(&h, cfg.alpha, &mut chan_rng);
        }
        let y = receive_block(&h, &pilots, sigma2, &mut noise_rng);
        let z = block_statistic(&y, &pilots);
        for m in 0..cfg.m_rx {
            samples.push(DatasetSample {
                features: z.row_stacked(m),
                target: h.row_stacked(m),
                task_value,
                block_index: b as u64,
            });
        }
    }
    samples.truncate(n_samples);

    let mut split_rng = rng::stream(seed, "split", 0);
    rng::shuffle(&mut split_rng, &mut samples);
    let n_train = n_samples * 9 / 10;
    let test = samples.split_off(n_train);
    Ok(Dataset {
        train: samples,
        test,
        seed,
    })
}

/// Empirical density of the per-block aggregate received power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// n_bins + 1 edges, ascending.
    pub edges: Vec<f64>,
    /// Density per bin; integrates to one over the binned support.
    pub densities: Vec<f64>,
    /// Sample mean of the per-block power.
    pub mean_power: f64,
    pub n_blocks: usize,
}

/// Simulate `n_blocks` blocks and histogram `sum_k ||y_k||^2`.
pub fn received_power_histogram(
    cfg: &SystemConfig,
    seed: u64,
    n_blocks: usize,
    n_bins: usize,
) -> Result<Histogram> {
    cfg.validate()?;
    if n_blocks < 1 || n_bins < 1 {
        return Err(Error::Config("n_blocks and n_bins must be >= 1".into()));
    }
    let pilots = make_pilots(cfg);
    let sigma2 = noise_variance(cfg, &pilots);
    let mut chan_rng = rng::stream(seed, "channel", 0);
    let mut noise_rng = rng::stream(seed, "noise", 0);

    let mut powers = Vec::with_capacity(n_blocks);
    let mut h = init_channel(cfg.m_rx, cfg.n_tx, &mut chan_rng);
    for b in 0..n_blocks {
        if b > 0 {
            h = step_channel(&h, cfg.alpha, &mut chan_rng);
        }
        powers.push(receive_block(&h, &pilots, sigma2, &mut noise_rng).power());
    }

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &p in &powers {
        lo = lo.min(p);
        hi = hi.max(p);
    }
    if hi <= lo {
        // Degenerate support (all blocks identical); widen a hair.
        hi = lo + 1.0;
    }
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for &p in &powers {
        let mut bin = ((p - lo) / width) as usize;
        if bin >= n_bins {
            bin = n_bins - 1;
        }
        counts[bin] += 1;
    }
    let total = powers.len() as f64;
    let densities: Vec<f64> = counts.iter().map(|&c| c as f64 / (total * width)).collect();
    let edges: Vec<f64> = (0..=n_bins).map(|i| lo + i as f64 * width).collect();
    let mean_power = powers.iter().sum::<f64>() / total;
    Ok(Histogram {
        edges,
        densities,
        mean_power,
        n_blocks,
    })
}
