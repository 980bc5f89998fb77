//! Seeded Monte Carlo harness.
//!
//! Every random draw comes from a ChaCha8 stream addressed by
//! `(seed, stream index)`. Bulk estimators address one stream per fixed-size
//! batch of trials; simulators that need replayable trials address one stream
//! per trial. Batches are evaluated in parallel and reduced in index order, so
//! results are bitwise independent of the thread count.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::error::{Error, Result};

/// Trials per batch for batch-addressed estimators.
pub const BATCH_SIZE: u64 = 8192;

/// Generator for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs `work` over consecutive index ranges of at most `batch` trials and
/// returns the per-batch results in index order.
pub fn run_batches<R, F>(trials: u64, batch: u64, threads: Option<usize>, work: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(u64, Range<u64>) -> R + Sync,
{
    let batch = batch.max(1);
    let batches = trials.div_ceil(batch);
    let run = || {
        (0..batches)
            .into_par_iter()
            .map(|b| work(b, b * batch..((b + 1) * batch).min(trials)))
            .collect::<Vec<R>>()
    };
    match threads {
        None => Ok(run()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Resource(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(run))
        }
    }
}

/// Running first and second moments of a real-valued per-trial quantity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanAccumulator {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl MeanAccumulator {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&mut self, other: &Self) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }

    pub fn stderr(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }
}

/// Exact integer first and second moments (for integer-valued trials such as
/// stopping times), immune to summation order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IntMoments {
    pub count: u64,
    pub sum: u128,
    pub sum_sq: u128,
}

impl IntMoments {
    pub fn push(&mut self, x: u64) {
        self.count += 1;
        self.sum += x as u128;
        self.sum_sq += (x as u128) * (x as u128);
    }

    pub fn merge(&mut self, other: &Self) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        self.sum as f64 / self.count as f64
    }

    pub fn stderr(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let mean = self.mean();
        let var = (self.sum_sq as f64 / n - mean * mean).max(0.0) * n / (n - 1.0);
        (var / n).sqrt()
    }
}

/// Binomial standard error of a proportion.
pub fn binomial_stderr(p: f64, trials: u64) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// Estimate with standard error and a symmetric 95% normal interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Estimate {
    pub fn new(value: f64, stderr: f64) -> Self {
        Self {
            value,
            stderr,
            ci_low: value - 1.96 * stderr,
            ci_high: value + 1.96 * stderr,
        }
    }
}

/// Exact sampler of `Σ_{i=1}^{n} Aᵢ` for i.i.d. `Aᵢ = C + c(1 − Zᵢ² + dZᵢ)`.
///
/// With `G = ΣZᵢ/√n`, the sum of squares splits as `ΣZᵢ² = G² + χ²_{n−1}`
/// with the chi-square independent of `G`, so one normal and one chi-square
/// draw reproduce the law of the whole sum.
#[derive(Debug, Clone)]
pub struct ASumSampler {
    n: u64,
    capacity: f64,
    c: f64,
    d: f64,
    chi: Option<ChiSquared<f64>>,
}

impl ASumSampler {
    pub fn new(n: u64, channel: &ChannelParams) -> Self {
        let (c, d) = channel.a_coefficients();
        let chi = (n > 1).then(|| ChiSquared::new((n - 1) as f64).expect("positive degrees of freedom"));
        Self {
            n,
            capacity: channel.capacity,
            c,
            d,
            chi,
        }
    }

    pub fn len(&self) -> u64 {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let n = self.n as f64;
        let g: f64 = rng.sample(StandardNormal);
        let rest = self.chi.as_ref().map_or(0.0, |chi| chi.sample(rng));
        let sum_z = n.sqrt() * g;
        let sum_z2 = g * g + rest;
        n * self.capacity + self.c * (n - sum_z2 + self.d * sum_z)
    }
}

/// One draw of `A₁` from a standard normal.
pub fn sample_a<R: rand::Rng + ?Sized>(channel: &ChannelParams, rng: &mut R) -> f64 {
    let (c, d) = channel.a_coefficients();
    let z: f64 = rng.sample(StandardNormal);
    channel.capacity + c * (1.0 - z * z + d * z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn batches_cover_all_trials_in_order() {
        let out = run_batches(20_000, 8192, Some(1), |b, r| (b, r.start, r.end)).unwrap();
        assert_eq!(out, vec![(0, 0, 8192), (1, 8192, 16384), (2, 16384, 20000)]);
        assert!(run_batches(0, 10, None, |_, r| r.end - r.start).unwrap().is_empty());
    }

    #[test]
    fn batch_results_do_not_depend_on_thread_count() {
        let work = |b: u64, r: Range<u64>| {
            let mut rng = stream_rng(7, b);
            r.map(|_| rng.random::<f64>()).sum::<f64>()
        };
        let one = run_batches(100_000, 1000, Some(1), work).unwrap();
        let many = run_batches(100_000, 1000, Some(8), work).unwrap();
        assert_eq!(one, many);
    }

    #[test]
    fn a_sum_sampler_matches_mean_and_variance() {
        let ch = ChannelParams::new(1.0).unwrap();
        let n = 50;
        let s = ASumSampler::new(n, &ch);
        let mut rng = stream_rng(3, 0);
        let mut acc = MeanAccumulator::default();
        for _ in 0..200_000 {
            acc.push(s.sample(&mut rng));
        }
        let nf = n as f64;
        let se = (nf * ch.dispersion / 200_000.0).sqrt();
        assert!((acc.mean() - nf * ch.capacity).abs() < 4.0 * se);
        assert!((acc.variance() / (nf * ch.dispersion) - 1.0).abs() < 0.02);
        assert_eq!(ASumSampler::new(0, &ch).sample(&mut rng), 0.0);
    }

    #[test]
    fn int_moments_are_exact() {
        let mut m = IntMoments::default();
        for x in [1u64, 2, 3, 4] {
            m.push(x);
        }
        assert_eq!(m.mean(), 2.5);
        let var: f64 = 5.0 / 3.0;
        assert!((m.stderr() - (var / 4.0).sqrt()).abs() < 1e-12);
    }
}
