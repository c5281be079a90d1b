//! Deterministic random streams.
//!
//! Every stochastic component draws from a named ChaCha8 stream derived from
//! a `(seed, label, index)` triple. ChaCha8 is a portable counter-based
//! generator, so identical seeds reproduce identical runs across platforms,
//! and components with different labels never share state: buffer activity
//! cannot perturb batch shuffling, channel noise cannot perturb the channel
//! walk, and so on.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The one generator used everywhere in this crate.
pub type Stream = ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed, a stream label and an index.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut state = seed;
    let _ = splitmix64(&mut state);
    for &b in label.as_bytes() {
        state ^= u64::from(b);
        let _ = splitmix64(&mut state);
    }
    state ^= index.wrapping_mul(0xd134_2543_de82_ef95);
    splitmix64(&mut state)
}

/// A named stream: `stream(seed, "noise", 3)` is independent of
/// `stream(seed, "channel", 3)` and of `stream(seed, "noise", 4)`.
pub fn stream(seed: u64, label: &str, index: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, label, index))
}

/// Uniform f64 in [0, 1), 53 random bits.
pub fn uniform(rng: &mut Stream) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform f64 in [lo, hi).
pub fn uniform_in(rng: &mut Stream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform(rng)
}

/// Uniform index in [0, n). Multiply-shift bounding; the bias is O(n / 2^64).
pub fn index(rng: &mut Stream, n: usize) -> usize {
    debug_assert!(n > 0);
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

/// Uniform integer in [0, n) for 64-bit counts.
pub fn index_u64(rng: &mut Stream, n: u64) -> u64 {
    debug_assert!(n > 0);
    ((rng.next_u64() as u128 * n as u128) >> 64) as u64
}

/// A standard-normal pair via Box-Muller. Complex draws consume exactly one
/// pair, which keeps stream consumption easy to reason about.
pub fn normal_pair(rng: &mut Stream) -> (f64, f64) {
    let u1 = loop {
        let u = uniform(rng);
        if u > 0.0 {
            break u;
        }
    };
    let u2 = uniform(rng);
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

/// Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut Stream, xs: &mut [T]) {
    for i in (1..xs.len()).rev() {
        let j = index(rng, i + 1);
        xs.swap(i, j);
    }
}

/// `k` distinct indices drawn uniformly from [0, n), in draw order.
pub fn sample_without_replacement(rng: &mut Stream, n: usize, k: usize) -> Vec<usize> {
    assert!(k <= n, "cannot draw {k} distinct indices from {n}");
    // Partial Fisher-Yates over a scratch index vector.
    let mut pool: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let j = i + index(rng, n - i);
        pool.swap(i, j);
        out.push(pool[i]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let mut a = stream(42, "x", 0);
        let mut b = stream(42, "x", 0);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn labels_and_indices_separate_streams() {
        let mut a = stream(42, "x", 0);
        let mut b = stream(42, "y", 0);
        let mut c = stream(42, "x", 1);
        let (va, vb, vc) = (a.next_u64(), b.next_u64(), c.next_u64());
        assert_ne!(va, vb);
        assert_ne!(va, vc);
        assert_ne!(vb, vc);
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = stream(1, "u", 0);
        for _ in 0..10_000 {
            let u = uniform(&mut rng);
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn normal_moments() {
        let mut rng = stream(7, "n", 0);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n / 2 {
            let (a, b) = normal_pair(&mut rng);
            sum += a + b;
            sumsq += a * a + b * b;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        // 3-sigma Monte-Carlo bands.
        assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
        assert!(
            (var - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt(),
            "var {var}"
        );
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = stream(3, "s", 0);
        let mut xs: Vec<usize> = (0..257).collect();
        shuffle(&mut rng, &mut xs);
        let mut sorted = xs.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..257).collect::<Vec<_>>());
    }

    #[test]
    fn sampling_without_replacement_is_distinct() {
        let mut rng = stream(9, "w", 0);
        let picks = sample_without_replacement(&mut rng, 50, 20);
        assert_eq!(picks.len(), 20);
        let mut sorted = picks.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 20);
        assert!(picks.iter().all(|&i| i < 50));
    }
}
