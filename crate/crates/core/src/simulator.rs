//! Monte Carlo simulation of the threshold-stopping VLSF decoder, the renewal
//! process behind the unbounded-times design, and the change-of-measure
//! martingale identity.
//!
//! Every trial draws from its own stream `stream_rng(seed, trial)`, so results
//! are independent of the thread count. All random quantities of a trial are
//! drawn before the stopping rule is applied; two runs that differ only in the
//! threshold therefore see identical channel realisations.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channel::{info_density_increment, ChannelParams};
use crate::codebook::{fill_codeword, generate_codebook, Codebook, Schedule, DEFAULT_SYMBOL_BUDGET};
use crate::error::{Error, Result};
use crate::mc::{run_batches, stream_rng, Estimate, IntMoments, MeanAccumulator, ASumSampler, BATCH_SIZE};
use crate::schedule::{CodeDesign, MessageCount};

/// Default cap on the number of simulated messages.
pub const DEFAULT_MAX_MESSAGES: u64 = 1 << 14;

const SIM_BATCH: u64 = 256;
const CODEBOOK_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

/// How impostor scores are produced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Samples each impostor's per-segment correlation with the output
    /// directly from its exact law under a fresh random codebook. Cost per
    /// trial is `O(M K)`.
    #[default]
    Ensemble,
    /// Materialises codewords and noise symbol by symbol. Cost per trial is
    /// `O(M n_K)`.
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub trials: u64,
    pub seed: u64,
    /// Draw the codebook once instead of per trial (forces the explicit engine).
    pub fixed_codebook: bool,
    /// Add `k ln J(P)` to the threshold at the `k`-th decoding time.
    pub j_slack: bool,
    pub threads: Option<usize>,
    pub max_messages: u64,
    pub record_trace: bool,
    pub engine: Engine,
}

impl SimConfig {
    pub fn new(trials: u64, seed: u64) -> Self {
        Self {
            trials,
            seed,
            fixed_codebook: false,
            j_slack: true,
            threads: None,
            max_messages: DEFAULT_MAX_MESSAGES,
            record_trace: false,
            engine: Engine::Ensemble,
        }
    }
}

/// Everything the simulator needs to know about a code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub schedule: Schedule,
    pub gamma: f64,
    pub m: u64,
    pub p_zero: f64,
    pub snr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    Threshold,
    Forced,
    ZeroDecode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopBin {
    pub time: u64,
    pub kind: StopKind,
    pub count: u64,
}

/// Result of one decoding attempt. Messages are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub tau: u64,
    /// Index into the schedule of the stopping time.
    pub stop_index: usize,
    pub decision: u64,
    pub forced: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRow {
    pub trial: u64,
    pub message: u64,
    pub zero_decode: bool,
    pub tau: u64,
    pub decision: u64,
    pub error: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub trials: u64,
    pub errors: u64,
    pub eps_hat: Estimate,
    /// Channel uses.
    pub tau_mean: Estimate,
    pub stop_histogram: Vec<StopBin>,
    pub zero_decodes: u64,
    pub forced: u64,
    pub seed: u64,
    pub engine: Engine,
    pub trace: Option<Vec<TraceRow>>,
}

/// Decision thresholds `γ + (pieces up to n_k) ln J` at each decoding time.
pub fn thresholds(schedule: &Schedule, gamma: f64, j_slack: bool, channel: &ChannelParams) -> Vec<f64> {
    schedule
        .spherical_pieces()
        .into_iter()
        .map(|p| if j_slack { gamma + f64::from(p) * channel.ln_j() } else { gamma })
        .collect()
}

/// Applies the stopping rule to scores laid out as `scores[k * m + i]`
/// (decoding time `k`, message `i + 1`): stop at the first time any score
/// reaches its threshold and decode to the largest such message; otherwise
/// decide message 1 at the last time.
pub fn stopping_rule(scores: &[f64], m: usize, thresholds: &[f64], schedule: &Schedule) -> TrialOutcome {
    for (k, &thr) in thresholds.iter().enumerate() {
        let row = &scores[k * m..(k + 1) * m];
        if let Some(i) = row.iter().rposition(|&s| s >= thr) {
            return TrialOutcome {
                tau: schedule.times()[k],
                stop_index: k,
                decision: i as u64 + 1,
                forced: false,
            };
        }
    }
    let last = thresholds.len() - 1;
    TrialOutcome {
        tau: schedule.times()[last],
        stop_index: last,
        decision: 1,
        forced: true,
    }
}

/// Decodes one transmission of message `w` (1-based) over `noise` with the
/// given codebook.
pub fn explicit_trial(codebook: &Codebook, w: u64, noise: &[f64], gamma: f64, j_slack: bool) -> Result<TrialOutcome> {
    let schedule = codebook.schedule();
    let n = schedule.last() as usize;
    if noise.len() != n {
        return Err(Error::ShapeMismatch(format!("{} noise symbols for n_K = {n}", noise.len())));
    }
    if w == 0 || w > codebook.m() {
        return Err(Error::Validation(format!("message {w} outside 1..={}", codebook.m())));
    }
    let channel = ChannelParams::new(codebook.snr())?;
    let thr = thresholds(schedule, gamma, j_slack, &channel);
    let x = codebook.codeword(w as usize - 1);
    let y: Vec<f64> = x.iter().zip(noise).map(|(a, b)| a + b).collect();
    let m = codebook.m() as usize;
    let scores = score_matrix(codebook.codewords(), m, &y, schedule, codebook.snr());
    Ok(stopping_rule(&scores, m, &thr, schedule))
}

fn score_matrix<'a>(codewords: impl Iterator<Item = &'a [f64]>, m: usize, y: &[f64], schedule: &Schedule, snr: f64) -> Vec<f64> {
    let k = schedule.k();
    let mut scores = vec![0.0; k * m];
    for (i, cw) in codewords.enumerate() {
        let mut acc = 0.0;
        let mut start = 0usize;
        for (j, &t) in schedule.times().iter().enumerate() {
            let end = t as usize;
            acc += cw[start..end]
                .iter()
                .zip(&y[start..end])
                .map(|(&a, &b)| info_density_increment(a, b, snr))
                .sum::<f64>();
            scores[j * m + i] = acc;
            start = end;
        }
    }
    scores
}

struct SegmentLaw {
    len: f64,
    chi: Option<ChiSquared<f64>>,
}

impl SegmentLaw {
    fn new(len: u64) -> Self {
        Self {
            len: len as f64,
            chi: (len > 1).then(|| ChiSquared::new((len - 1) as f64).expect("positive degrees of freedom")),
        }
    }

    fn chi<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.chi.as_ref().map_or(0.0, |c| c.sample(rng))
    }
}

/// Scores of one trial under a fresh codebook, segment by segment.
///
/// For a segment of length `L`, with the transmitted piece `x` and noise `z`,
/// `⟨x, z⟩ = sqrt(LP) G` and `‖z‖² = G² + χ²_{L−1}`. An independent impostor
/// piece uniform on the same sphere has `⟨x̄, y⟩ = sqrt(LP) ‖y‖ U` with `U`
/// the first coordinate of a uniform unit vector.
fn ensemble_scores<R: Rng + ?Sized>(
    laws: &[SegmentLaw],
    m: usize,
    w: usize,
    snr: f64,
    rng: &mut R,
) -> Vec<f64> {
    let k = laws.len();
    let mut scores = vec![0.0; k * m];
    let half_log = 0.5 * snr.ln_1p();
    for (j, law) in laws.iter().enumerate() {
        if j > 0 {
            let (prev, cur) = scores.split_at_mut(j * m);
            cur[..m].copy_from_slice(&prev[(j - 1) * m..]);
        }
        let len = law.len;
        if len == 0.0 {
            continue;
        }
        let amp = (len * snr).sqrt();
        let g: f64 = rng.sample(StandardNormal);
        let z2 = g * g + law.chi(rng);
        let y2 = len * snr + 2.0 * amp * g + z2;
        let base = len * half_log + y2 / (2.0 * (1.0 + snr));
        let row = &mut scores[j * m..(j + 1) * m];
        row[w] += base - 0.5 * z2;
        let y_norm = y2.sqrt();
        for (i, s) in row.iter_mut().enumerate() {
            if i == w {
                continue;
            }
            let u = if law.chi.is_some() {
                let h: f64 = rng.sample(StandardNormal);
                h / (h * h + law.chi(rng)).sqrt()
            } else if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            };
            let inner = amp * y_norm * u;
            *s += base - 0.5 * (y2 - 2.0 * inner + len * snr);
        }
    }
    scores
}

#[derive(Default)]
struct Tally {
    errors: u64,
    tau: IntMoments,
    bins: Vec<u64>,
    zero: u64,
    forced: u64,
    trace: Vec<TraceRow>,
}

fn validate_scheme(spec: &SchemeSpec, cfg: &SimConfig) -> Result<ChannelParams> {
    if spec.m == 0 {
        return Err(Error::Validation("M must be at least 1".into()));
    }
    if spec.m > cfg.max_messages {
        return Err(Error::Resource(format!("M = {} exceeds the cap of {}", spec.m, cfg.max_messages)));
    }
    if !(0.0..=1.0).contains(&spec.p_zero) {
        return Err(Error::Validation(format!("p_zero = {} outside [0, 1]", spec.p_zero)));
    }
    if cfg.trials == 0 {
        return Err(Error::Validation("at least one trial is required".into()));
    }
    if spec.gamma.is_nan() {
        return Err(Error::Validation("threshold is NaN".into()));
    }
    ChannelParams::new(spec.snr)
}

/// Simulates a scheme given directly by its parameters.
pub fn simulate_scheme(spec: &SchemeSpec, cfg: &SimConfig) -> Result<SimStats> {
    let channel = validate_scheme(spec, cfg)?;
    let engine = if cfg.fixed_codebook { Engine::Explicit } else { cfg.engine };
    let schedule = &spec.schedule;
    let n = schedule.last();
    if engine == Engine::Explicit {
        spec.m
            .checked_mul(n)
            .filter(|&t| t <= DEFAULT_SYMBOL_BUDGET)
            .ok_or_else(|| Error::Resource(format!("M·n_K = {}·{n} exceeds the explicit-engine budget", spec.m)))?;
    }
    let m = spec.m as usize;
    let k = schedule.k();
    let thr = thresholds(schedule, spec.gamma, cfg.j_slack, &channel);
    let laws: Vec<SegmentLaw> = schedule.segment_lengths().into_iter().map(SegmentLaw::new).collect();
    let fixed = if cfg.fixed_codebook {
        Some(generate_codebook(spec.m, schedule, spec.snr, cfg.seed.wrapping_add(CODEBOOK_SEED_OFFSET))?)
    } else {
        None
    };

    let run_trial = |trial: u64, buf: &mut Vec<f64>| -> (u64, bool, Option<TrialOutcome>) {
        let mut rng = stream_rng(cfg.seed, trial);
        let zero = rng.random::<f64>() < spec.p_zero;
        let w = rng.random_range(0..m);
        let outcome = match engine {
            Engine::Ensemble => {
                let scores = ensemble_scores(&laws, m, w, spec.snr, &mut rng);
                stopping_rule(&scores, m, &thr, schedule)
            }
            Engine::Explicit => {
                let nk = n as usize;
                let y: Vec<f64>;
                let scores = match &fixed {
                    Some(cb) => {
                        let x = cb.codeword(w);
                        y = x.iter().map(|&a| a + rng.sample::<f64, _>(StandardNormal)).collect();
                        score_matrix(cb.codewords(), m, &y, schedule, spec.snr)
                    }
                    None => {
                        buf.resize(m * nk, 0.0);
                        for cw in buf.chunks_mut(nk.max(1)).take(m) {
                            fill_codeword(cw, schedule, spec.snr, &mut rng);
                        }
                        let x = &buf[w * nk..(w + 1) * nk];
                        y = x.iter().map(|&a| a + rng.sample::<f64, _>(StandardNormal)).collect();
                        let cws = (0..m).map(|i| &buf[i * nk..(i + 1) * nk]);
                        score_matrix(cws, m, &y, schedule, spec.snr)
                    }
                };
                stopping_rule(&scores, m, &thr, schedule)
            }
        };
        (w as u64 + 1, zero, (!zero).then_some(outcome))
    };

    let batches = run_batches(cfg.trials, SIM_BATCH, cfg.threads, |_, range| {
        let mut t = Tally {
            bins: vec![0; k + 1],
            ..Tally::default()
        };
        let mut buf = Vec::new();
        for trial in range {
            let (message, zero, outcome) = run_trial(trial, &mut buf);
            let (tau, decision) = match outcome {
                None => {
                    t.zero += 1;
                    (0, 1)
                }
                Some(o) => {
                    if o.forced {
                        t.forced += 1;
                        t.bins[k] += 1;
                    } else {
                        t.bins[o.stop_index] += 1;
                    }
                    (o.tau, o.decision)
                }
            };
            let error = decision != message;
            t.errors += u64::from(error);
            t.tau.push(tau);
            if cfg.record_trace {
                t.trace.push(TraceRow {
                    trial,
                    message,
                    zero_decode: zero,
                    tau,
                    decision,
                    error,
                });
            }
        }
        t
    })?;

    let mut total = Tally {
        bins: vec![0; k + 1],
        ..Tally::default()
    };
    for b in batches {
        total.errors += b.errors;
        total.tau.merge(&b.tau);
        for (a, c) in total.bins.iter_mut().zip(&b.bins) {
            *a += c;
        }
        total.zero += b.zero;
        total.forced += b.forced;
        total.trace.extend(b.trace);
    }

    let mut hist: Vec<StopBin> = schedule
        .times()
        .iter()
        .zip(&total.bins)
        .map(|(&time, &count)| StopBin {
            time,
            kind: StopKind::Threshold,
            count,
        })
        .collect();
    hist.push(StopBin {
        time: n,
        kind: StopKind::Forced,
        count: total.bins[k],
    });
    hist.push(StopBin {
        time: 0,
        kind: StopKind::ZeroDecode,
        count: total.zero,
    });

    let trials = cfg.trials;
    let eps = total.errors as f64 / trials as f64;
    Ok(SimStats {
        trials,
        errors: total.errors,
        eps_hat: Estimate::new(eps, crate::mc::binomial_stderr(eps, trials)),
        tau_mean: Estimate::new(total.tau.mean(), total.tau.stderr()),
        stop_histogram: hist,
        zero_decodes: total.zero,
        forced: total.forced,
        seed: cfg.seed,
        engine,
        trace: cfg.record_trace.then_some(total.trace),
    })
}

/// Simulates a finite-`K` design.
pub fn simulate_code(design: &CodeDesign, cfg: &SimConfig) -> Result<SimStats> {
    if design.grid_spacing.is_some() {
        return Err(Error::Validation(
            "the unbounded-times design is simulated through simulate_renewal".into(),
        ));
    }
    let m = match design.messages {
        MessageCount::Exact(m) if m <= cfg.max_messages => m,
        MessageCount::Exact(m) => {
            return Err(Error::Resource(format!(
                "M = {m} exceeds the cap of {}; cap the design's message count first",
                cfg.max_messages
            )))
        }
        MessageCount::Huge { ln } => {
            return Err(Error::Resource(format!(
                "M = e^{ln:.1} cannot be simulated; cap the design's message count first"
            )))
        }
    };
    simulate_scheme(
        &SchemeSpec {
            schedule: design.schedule.clone(),
            gamma: design.gamma,
            m,
            p_zero: design.p_zero,
            snr: design.snr,
        },
        cfg,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewalStats {
    pub trials: u64,
    pub grid_spacing: u64,
    /// Grid steps until the walk first exceeds `γ/ℓ`.
    pub xi_mean: Estimate,
    /// `ℓ ξ` in channel uses.
    pub tau_mean: Estimate,
    /// `(γ/ℓ)/μ + m/μ²`.
    pub lorden_bound: f64,
    /// Drift lower bound used in `lorden_bound`.
    pub mu: f64,
    /// Empirical second moment of the increments.
    pub second_moment: f64,
    pub scaled_threshold: f64,
    /// Fraction of trials with `ξ = 1`.
    pub first_step_fraction: f64,
    /// Fraction of trials whose first increment is positive.
    pub positive_increment_fraction: f64,
    pub seed: u64,
}

/// First-passage simulation of a random walk with i.i.d. increments drawn by
/// `increment`: `ξ = inf{k : B_1 + … + B_k > threshold}`.
pub fn simulate_first_passage<F>(
    threshold: f64,
    mu: f64,
    trials: u64,
    seed: u64,
    threads: Option<usize>,
    increment: F,
) -> Result<RenewalStats>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> f64 + Sync,
{
    if !(mu > 0.0) {
        return Err(Error::Validation(format!("drift lower bound μ = {mu} must be positive")));
    }
    if trials == 0 {
        return Err(Error::Validation("at least one trial is required".into()));
    }
    let cap = (1000.0 * (threshold.max(0.0) / mu + 10.0)).min(1e12) as u64;
    let parts = run_batches(trials, SIM_BATCH, threads, |_, range| {
        let mut xi = IntMoments::default();
        let mut sq = MeanAccumulator::default();
        let (mut first, mut positive) = (0u64, 0u64);
        for trial in range {
            let mut rng = stream_rng(seed, trial);
            let mut sum = 0.0;
            let mut steps = 0u64;
            loop {
                let b = increment(&mut rng);
                sq.push(b * b);
                if steps == 0 && b > 0.0 {
                    positive += 1;
                }
                sum += b;
                steps += 1;
                if sum > threshold {
                    break;
                }
                if steps >= cap {
                    return Err(Error::Resource(format!("walk did not cross {threshold} within {cap} steps")));
                }
            }
            first += u64::from(steps == 1);
            xi.push(steps);
        }
        Ok((xi, sq, first, positive))
    })?;
    let mut xi = IntMoments::default();
    let mut sq = MeanAccumulator::default();
    let (mut first, mut positive) = (0u64, 0u64);
    for p in parts {
        let (a, b, f, q) = p?;
        xi.merge(&a);
        sq.merge(&b);
        first += f;
        positive += q;
    }
    let second_moment = sq.mean();
    let xi_mean = Estimate::new(xi.mean(), xi.stderr());
    Ok(RenewalStats {
        trials,
        grid_spacing: 1,
        xi_mean,
        tau_mean: xi_mean,
        lorden_bound: threshold / mu + second_moment / (mu * mu),
        mu,
        second_moment,
        scaled_threshold: threshold,
        first_step_fraction: first as f64 / trials as f64,
        positive_increment_fraction: positive as f64 / trials as f64,
        seed,
    })
}

/// Renewal process of the unbounded-times code: increments
/// `B = (A_1 + … + A_ℓ − ln J)/ℓ` and threshold `γ/ℓ`.
pub fn simulate_renewal(grid_spacing: u64, gamma: f64, snr: f64, trials: u64, seed: u64, threads: Option<usize>) -> Result<RenewalStats> {
    if grid_spacing == 0 {
        return Err(Error::Validation("grid spacing must be at least 1".into()));
    }
    let ch = ChannelParams::new(snr)?;
    let l = grid_spacing as f64;
    let mu = ch.capacity - ch.ln_j() / l;
    if !(mu > 0.0) {
        return Err(Error::Validation(format!(
            "C(P) − ln J(P)/ℓ = {mu} is not positive; increase the grid spacing"
        )));
    }
    let sampler = ASumSampler::new(grid_spacing, &ch);
    let ln_j = ch.ln_j();
    let mut stats = simulate_first_passage(gamma / l, mu, trials, seed, threads, |rng| (sampler.sample(rng) - ln_j) / l)?;
    stats.grid_spacing = grid_spacing;
    stats.tau_mean = Estimate::new(l * stats.xi_mean.value, l * stats.xi_mean.stderr);
    Ok(stats)
}

/// Sampling scheme for [`martingale_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MartingaleEstimator {
    /// `Z ~ N(0, 1)` directly. The weight `e^{−ΣA}` has infinite variance
    /// once `P ≥ 1`, so standard errors are unreliable there.
    Plain,
    /// Draws `Z ~ N(−θ sqrt(P), 1 + P)` and reweights by the likelihood ratio.
    Tilted(f64),
}

impl Default for MartingaleEstimator {
    fn default() -> Self {
        MartingaleEstimator::Tilted(0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub n: u64,
    pub snr: f64,
    pub trials: u64,
    pub estimator: MartingaleEstimator,
    pub mean: Estimate,
    /// `(mean − 1)/stderr`.
    pub z: f64,
    pub passes: bool,
}

/// Estimates `E[exp(−Σ_{i≤n} A_i)]`, which equals 1.
pub fn martingale_check(n: u64, snr: f64, trials: u64, seed: u64, estimator: MartingaleEstimator) -> Result<MartingaleReport> {
    let ch = ChannelParams::new(snr)?;
    if n == 0 {
        return Ok(MartingaleReport {
            n,
            snr,
            trials,
            estimator,
            mean: Estimate::new(1.0, 0.0),
            z: 0.0,
            passes: true,
        });
    }
    if trials < 2 {
        return Err(Error::Validation("at least two trials are required".into()));
    }
    let (c, d) = ch.a_coefficients();
    let a = |z: f64| ch.capacity + c * (1.0 - z * z + d * z);
    let parts = match estimator {
        MartingaleEstimator::Plain => {
            let sampler = ASumSampler::new(n, &ch);
            run_batches(trials, BATCH_SIZE, None, |b, range| {
                let mut rng = stream_rng(seed, b);
                let mut acc = MeanAccumulator::default();
                for _ in range {
                    acc.push((-sampler.sample(&mut rng)).exp());
                }
                acc
            })?
        }
        MartingaleEstimator::Tilted(theta) => {
            if !theta.is_finite() {
                return Err(Error::Validation(format!("tilt θ = {theta} must be finite")));
            }
            let shift = -theta * snr.sqrt();
            let sd = (1.0 + snr).sqrt();
            let ln_sd = sd.ln();
            run_batches(trials, BATCH_SIZE, None, |b, range| {
                let mut rng = stream_rng(seed, b);
                let mut acc = MeanAccumulator::default();
                for _ in range {
                    let mut log_w = 0.0;
                    for _ in 0..n {
                        let g: f64 = rng.sample(StandardNormal);
                        let z = shift + sd * g;
                        // ln φ(z) − ln q(z) with q the N(shift, sd²) density
                        log_w += -a(z) - 0.5 * z * z + 0.5 * g * g + ln_sd;
                    }
                    acc.push(log_w.exp());
                }
                acc
            })?
        }
    };
    let mut acc = MeanAccumulator::default();
    for p in &parts {
        acc.merge(p);
    }
    let mean = Estimate::new(acc.mean(), acc.stderr());
    let z = (mean.value - 1.0) / mean.stderr;
    Ok(MartingaleReport {
        n,
        snr,
        trials,
        estimator,
        mean,
        z,
        passes: z.abs() <= 4.0,
    })
}
