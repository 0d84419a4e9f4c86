//! Simulation of non-overlapping k-spacings.
//!
//! A replicate of `N` k-spacings of `n = Nk - 1` uniforms is drawn through the
//! exponential representation: with `E_1, ..., E_{Nk}` unit exponentials,
//! `Y_i` the sum of the `i`-th block of `k` of them and `S = E_1 + ... + E_{Nk}`,
//! the spacings are `D_i = Y_i / S`.
//!
//! Because the gamma CDF is strictly increasing,
//! `#{W_i <= s} = #{Y_i <= mu H_k^{-1}(s)}` for `W_i = H_k(Nk D_i)` and
//! `mu = S/(Nk)`. The empirical path of the sorted `W` is therefore the reduced
//! spacings process exactly, and only one sort is needed to build it.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gamma::{self, GammaOrder};
use crate::rng::StreamKey;

/// Default cap on `N * k`, the number of exponentials drawn per replicate.
pub const DEFAULT_MAX_DRAWS: u64 = 100_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpacingsSample {
    pub k: u32,
    /// Number of spacings `N`.
    pub n_spacings: usize,
    /// Sample size `n = Nk - 1` of the underlying uniforms.
    pub n: u64,
    /// Block sums `Y_i`, each gamma(k) distributed.
    pub y: Vec<f64>,
    /// `S_{n+1}`, the sum of all `Nk` exponentials.
    pub s_total: f64,
    /// Spacings `D_i = Y_i / S_{n+1}`.
    pub d: Vec<f64>,
    /// Normalizer `mu_n = S_{n+1} / (Nk)`.
    pub mu: f64,
    pub seed: u64,
    pub replicate: u64,
}

/// Sorted transformed points `W_(1) <= ... <= W_(N)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformizedSample {
    pub w: Vec<f64>,
    pub k: u32,
    pub n_spacings: usize,
    pub seed: u64,
}

fn check_shape(k: u32, n_spacings: usize, max_draws: u64) -> Result<()> {
    GammaOrder::new(k)?;
    if n_spacings < 2 {
        return Err(Error::domain(format!(
            "need at least two spacings, got N = {n_spacings}"
        )));
    }
    let draws = (n_spacings as u64).checked_mul(k as u64);
    match draws {
        Some(d) if d <= max_draws => Ok(()),
        _ => Err(Error::Resource(format!(
            "N*k = {n_spacings}*{k} exceeds the cap of {max_draws} exponential draws"
        ))),
    }
}

/// One replicate keyed by `(seed, N, k, 0)`.
pub fn sample_spacings(k: u32, n_spacings: usize, seed: u64) -> Result<SpacingsSample> {
    sample_replicate(k, n_spacings, seed, 0, DEFAULT_MAX_DRAWS)
}

/// Replicate `replicate` of the `(seed, N, k)` family, on its own substream.
pub fn sample_replicate(
    k: u32,
    n_spacings: usize,
    seed: u64,
    replicate: u64,
    max_draws: u64,
) -> Result<SpacingsSample> {
    check_shape(k, n_spacings, max_draws)?;
    let mut stream = StreamKey::new(seed, n_spacings as u64, k as u64, replicate).stream();
    let y = (0..n_spacings)
        .map(|_| (0..k).map(|_| stream.next_exp1()).sum::<f64>())
        .collect();
    Ok(assemble(k, y, seed, replicate))
}

/// Builds a sample from an explicit exponential stream (block `i` is
/// `exps[(i-1)k .. ik]`). Intended for test injection.
pub fn from_exponentials(
    k: u32,
    n_spacings: usize,
    exps: &[f64],
    seed: u64,
) -> Result<SpacingsSample> {
    check_shape(k, n_spacings, u64::MAX)?;
    if exps.len() != n_spacings * k as usize {
        return Err(Error::domain(format!(
            "expected {} exponentials, got {}",
            n_spacings * k as usize,
            exps.len()
        )));
    }
    if let Some(bad) = exps.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
        return Err(Error::domain(format!(
            "exponential draws must be finite and positive, got {bad}"
        )));
    }
    let y = exps
        .chunks_exact(k as usize)
        .map(|c| c.iter().sum())
        .collect();
    Ok(assemble(k, y, seed, 0))
}

fn assemble(k: u32, y: Vec<f64>, seed: u64, replicate: u64) -> SpacingsSample {
    let n_spacings = y.len();
    let nk = n_spacings as u64 * k as u64;
    // n + 1 = Nk, so S_{n+1} is the sum of every block
    let s_total: f64 = y.iter().sum();
    let d = y.iter().map(|yi| yi / s_total).collect();
    SpacingsSample {
        k,
        n_spacings,
        n: nk - 1,
        y,
        s_total,
        d,
        mu: s_total / nk as f64,
        seed,
        replicate,
    }
}

/// `mu_n = S_{n+1} / (Nk)`.
pub fn normalizer(sample: &SpacingsSample) -> f64 {
    sample.mu
}

impl SpacingsSample {
    pub fn order(&self) -> GammaOrder {
        GammaOrder::new(self.k).expect("validated at construction")
    }

    /// `W_i = H_k(Nk D_i)` in index order.
    pub fn transformed_points(&self) -> Vec<f64> {
        let k = self.order();
        let nk = (self.n_spacings as u64 * self.k as u64) as f64;
        self.d
            .iter()
            .map(|&di| gamma::cdf(k, nk * di).expect("spacings are positive and finite"))
            .collect()
    }
}

/// Sorted `W_i = H_k(Nk D_i)`; the empirical path of these points is the
/// reduced k-spacings process.
pub fn uniformize(sample: &SpacingsSample) -> UniformizedSample {
    let mut w = sample.transformed_points();
    w.sort_by(f64::total_cmp);
    UniformizedSample {
        w,
        k: sample.k,
        n_spacings: sample.n_spacings,
        seed: sample.seed,
    }
}
