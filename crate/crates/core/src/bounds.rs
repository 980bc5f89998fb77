//! Non-asymptotic and asymptotic performance bounds.
//!
//! [`theorem3_eval`] estimates the random-coding bound on error probability
//! and average decoding time for a given schedule and threshold; the
//! remaining functions evaluate closed-form rate expansions.

use serde::{Deserialize, Serialize};

use crate::channel::{binary_entropy, capacity, dispersion, nested_log, q_function, q_inverse, ChannelParams, MomentSet};
use crate::codebook::Schedule;
use crate::error::{Error, Result};
use crate::mc::{binomial_stderr, run_batches, stream_rng, ASumSampler, Estimate, IntMoments, BATCH_SIZE};

/// Monte Carlo estimate of `P[Σ_{i≤n} Aᵢ < threshold]`.
pub fn tail_prob_mc(n: u64, threshold: f64, snr: f64, trials: u64, seed: u64) -> Result<Estimate> {
    if n == 0 || trials == 0 {
        return Err(Error::Validation("tail_prob_mc needs n ≥ 1 and trials ≥ 1".into()));
    }
    let channel = ChannelParams::new(snr)?;
    if threshold == f64::NEG_INFINITY {
        return Ok(Estimate::new(0.0, 0.0));
    }
    let sampler = ASumSampler::new(n, &channel);
    let counts = run_batches(trials, BATCH_SIZE, None, |b, range| {
        let mut rng = stream_rng(seed, b);
        range.filter(|_| sampler.sample(&mut rng) < threshold).count() as u64
    })?;
    let p = counts.iter().sum::<u64>() as f64 / trials as f64;
    Ok(Estimate::new(p, binomial_stderr(p, trials)))
}

/// Leading moderate-deviations term `Q(z)·exp(z³μ₃ / (6√n σ³))` for
/// `P[Σ (Xᵢ − E X) ≥ zσ√n]`.
///
/// For the lower tail of a sum pass [`MomentSet::reflected`].
pub fn petrov_tail(n: u64, z: f64, moments: &MomentSet) -> Result<f64> {
    if !(z >= 0.0) {
        return Err(Error::domain("petrov_tail", format!("z must be non-negative, got {z}")));
    }
    if n == 0 {
        return Err(Error::domain("petrov_tail", "n must be at least 1"));
    }
    let nf = n as f64;
    if z > 2.0 * nf.powf(1.0 / 6.0) {
        log::warn!("petrov_tail: z = {z} is outside the moderate-deviations range for n = {n}");
    }
    let sigma = moments.sigma();
    Ok(q_function(z) * (z.powi(3) * moments.mu3 / (6.0 * nf.sqrt() * sigma.powi(3))).exp())
}

/// How the probability terms of the average-decoding-time bound are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// `P[∩_{j≤i} {S_j < γ'}]` from shared partial-sum paths.
    #[default]
    Joint,
    /// Each intersection relaxed to its last event `P[S_i < γ']`.
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem3Config {
    pub trials: u64,
    pub seed: u64,
    pub mode: EvalMode,
    /// Add `K·ln J(P)` to the threshold (the valid direction of the bound).
    pub j_slack: bool,
    pub threads: Option<usize>,
}

impl Theorem3Config {
    pub fn new(trials: u64, seed: u64, mode: EvalMode) -> Self {
        Self {
            trials,
            seed,
            mode,
            j_slack: true,
            threads: None,
        }
    }
}

/// Monte Carlo evaluation of the error-probability and average-decoding-time bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub times: Vec<u64>,
    pub gamma: f64,
    pub log_m: f64,
    pub snr: f64,
    pub mode: EvalMode,
    /// Threshold used for the tails, `γ + K ln J(P)` or `γ`.
    pub slacked_threshold: f64,
    pub eps_upper: f64,
    pub eps_stderr: f64,
    pub n_upper: f64,
    pub n_upper_stderr: f64,
    /// `ln((M − 1)e^{−γ})`; `-inf` when `M = 1`.
    pub union_term_log: f64,
    /// `P[S_{n_k} < γ']` for each decoding time.
    pub marginal_tail: Vec<f64>,
    pub marginal_stderr: Vec<f64>,
    /// `P[∩_{j≤i} {S_{n_j} < γ'}]` for `i = 1, …, K−1`.
    pub joint_tail: Vec<f64>,
    pub joint_stderr: Vec<f64>,
    /// `P[S_{n_k} < γ]` without the `ln J` slack.
    pub raw_marginal_tail: Vec<f64>,
    pub raw_marginal_stderr: Vec<f64>,
    /// `n_upper` under the other evaluation mode, for comparison.
    pub n_upper_alternate: f64,
    pub trials: u64,
    pub seed: u64,
}

#[derive(Default)]
struct Tally {
    marginal: Vec<u64>,
    joint: Vec<u64>,
    raw: Vec<u64>,
    n_joint: IntMoments,
    n_marginal: IntMoments,
}

impl Tally {
    fn new(k: usize) -> Self {
        Self {
            marginal: vec![0; k],
            joint: vec![0; k],
            raw: vec![0; k],
            ..Default::default()
        }
    }

    fn merge(&mut self, other: &Tally) {
        for (a, b) in [(&mut self.marginal, &other.marginal), (&mut self.joint, &other.joint), (&mut self.raw, &other.raw)] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.n_joint.merge(&other.n_joint);
        self.n_marginal.merge(&other.n_marginal);
    }
}

/// Evaluates `ε ≤ P[S_{n_K} < γ'] + (M − 1)e^{−γ}` and
/// `E[τ] ≤ n_1 + Σ (n_{i+1} − n_i) P[∩_{j≤i} {S_{n_j} < γ'}]`, where `S_n` is
/// the proxy information-density sum and `γ' = γ + K ln J(P)`.
///
/// `log_m` is `ln M`, so that designs with astronomically many messages are
/// handled in log space. The power-violation term is zero by construction.
pub fn theorem3_eval(schedule: &Schedule, gamma: f64, log_m: f64, snr: f64, config: &Theorem3Config) -> Result<BoundReport> {
    if !gamma.is_finite() {
        return Err(Error::Validation(format!("γ must be finite, got {gamma}")));
    }
    if !(log_m >= 0.0) {
        return Err(Error::Validation(format!("ln M must be non-negative, got {log_m}")));
    }
    if config.trials == 0 {
        return Err(Error::Validation("trials must be at least 1".into()));
    }
    let channel = ChannelParams::new(snr)?;
    let k = schedule.k();
    let pieces = *schedule.spherical_pieces().last().expect("non-empty schedule");
    let threshold = if config.j_slack {
        gamma + f64::from(pieces) * channel.ln_j()
    } else {
        gamma
    };
    let samplers: Vec<ASumSampler> = schedule
        .segment_lengths()
        .into_iter()
        .map(|len| ASumSampler::new(len, &channel))
        .collect();
    let times = schedule.times();
    let gaps: Vec<u64> = times.windows(2).map(|w| w[1] - w[0]).collect();

    let tallies = run_batches(config.trials, BATCH_SIZE, config.threads, |b, range| {
        let mut rng = stream_rng(config.seed, b);
        let mut t = Tally::new(k);
        for _ in range {
            let mut sum = 0.0;
            let mut all_below = true;
            let mut n_joint = times[0];
            let mut n_marginal = times[0];
            for (i, sampler) in samplers.iter().enumerate() {
                sum += sampler.sample(&mut rng);
                let below = sum < threshold;
                all_below &= below;
                t.marginal[i] += u64::from(below);
                t.joint[i] += u64::from(all_below);
                t.raw[i] += u64::from(sum < gamma);
                if i < gaps.len() {
                    if all_below {
                        n_joint += gaps[i];
                    }
                    if below {
                        n_marginal += gaps[i];
                    }
                }
            }
            t.n_joint.push(n_joint);
            t.n_marginal.push(n_marginal);
        }
        t
    })?;
    let mut total = Tally::new(k);
    tallies.iter().for_each(|t| total.merge(t));

    let trials = config.trials;
    let freq = |counts: &[u64]| -> (Vec<f64>, Vec<f64>) {
        counts
            .iter()
            .map(|&c| {
                let p = c as f64 / trials as f64;
                (p, binomial_stderr(p, trials))
            })
            .unzip()
    };
    let (marginal_tail, marginal_stderr) = freq(&total.marginal);
    let (joint_tail, joint_stderr) = freq(&total.joint[..k - 1]);
    let (raw_marginal_tail, raw_marginal_stderr) = freq(&total.raw);

    // ln(M − 1) = ln M + ln(1 − 1/M)
    let union_term_log = log_m + (-(-log_m).exp()).ln_1p() - gamma;
    let eps_upper = (marginal_tail[k - 1] + union_term_log.exp()).min(1.0);
    let (chosen, other) = match config.mode {
        EvalMode::Joint => (&total.n_joint, &total.n_marginal),
        EvalMode::Marginal => (&total.n_marginal, &total.n_joint),
    };

    Ok(BoundReport {
        times: times.to_vec(),
        gamma,
        log_m,
        snr,
        mode: config.mode,
        slacked_threshold: threshold,
        eps_upper,
        eps_stderr: marginal_stderr[k - 1],
        n_upper: chosen.mean(),
        n_upper_stderr: chosen.stderr(),
        union_term_log,
        marginal_tail,
        marginal_stderr,
        joint_tail,
        joint_stderr,
        raw_marginal_tail,
        raw_marginal_stderr,
        n_upper_alternate: other.mean(),
        trials,
        seed: config.seed,
    })
}

/// Bound for a code that decodes at time zero with probability `p` and
/// otherwise runs an inner code with the bound `inner`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedBound {
    pub p_zero: f64,
    /// `p + (1 − p)·ε_inner`.
    pub eps_upper: f64,
    pub eps_stderr: f64,
    /// `(1 − p)·N_inner`.
    pub n_upper: f64,
    pub n_upper_stderr: f64,
    pub inner: BoundReport,
}

/// Lifts an inner-code bound through the Bernoulli(`p_zero`) decode-at-zero slot.
pub fn lift_bound(inner: BoundReport, p_zero: f64) -> Result<LiftedBound> {
    if !(0.0..1.0).contains(&p_zero) {
        return Err(Error::Validation(format!("p_zero must lie in [0, 1), got {p_zero}")));
    }
    let q = 1.0 - p_zero;
    Ok(LiftedBound {
        p_zero,
        eps_upper: p_zero + q * inner.eps_upper,
        eps_stderr: q * inner.eps_stderr,
        n_upper: q * inner.n_upper,
        n_upper_stderr: q * inner.n_upper_stderr,
        inner,
    })
}

/// Asymptotic regime of a rate expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Regime {
    /// Fixed length, maximal power: `NC − √(NV) Q⁻¹(ε) + ½ ln N`.
    #[serde(rename = "K1_maxpower")]
    K1MaxPower,
    /// Fixed length, average power: `N C(P') − √(N ln N V(P'))`, `P' = P/(1−ε)`.
    #[serde(rename = "K1_avgpower")]
    K1AvgPower,
    /// `K ≥ 2` decoding times: `NC/(1−ε) − √(N ln_(K−1)(N) V/(1−ε))`.
    #[serde(rename = "finiteK")]
    FiniteK,
    /// Unbounded decoding times, maximal power:
    /// `NC/(1−ε) − √(N·4C ln J/(1−ε)) − ln N`.
    #[serde(rename = "Kinf_maxpower")]
    KInfMaxPower,
    /// Unbounded decoding times, average power: `NC/(1−ε) − ln N`.
    #[serde(rename = "Kinf_avgpower_ach")]
    KInfAvgPowerAch,
    /// `NC/(1−ε) + h_b(ε)/(1−ε)`, valid for every `K`.
    #[serde(rename = "converse")]
    Converse,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::K1MaxPower,
        Regime::K1AvgPower,
        Regime::FiniteK,
        Regime::KInfMaxPower,
        Regime::KInfAvgPowerAch,
        Regime::Converse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::K1MaxPower => "K1_maxpower",
            Regime::K1AvgPower => "K1_avgpower",
            Regime::FiniteK => "finiteK",
            Regime::KInfMaxPower => "Kinf_maxpower",
            Regime::KInfAvgPowerAch => "Kinf_avgpower_ach",
            Regime::Converse => "converse",
        }
    }

    pub fn is_achievability(self) -> bool {
        self != Regime::Converse
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown regime '{s}'")))
    }
}

/// Input to [`asymptotic_rate`]. `k` is ignored except for [`Regime::FiniteK`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSpec {
    pub regime: Regime,
    pub k: Option<u32>,
    pub n: f64,
    pub eps: f64,
    pub snr: f64,
}

/// Rate of an asymptotic expansion at one operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticPoint {
    pub regime: Regime,
    /// Number of decoding times; `None` for unbounded (or, for the converse, any).
    pub k: Option<u32>,
    pub n: f64,
    pub eps: f64,
    pub snr: f64,
    /// `ln M / N` in nats per channel use.
    pub rate: f64,
    /// Ratio of the rate to the ε-capacity `C/(1−ε)`.
    pub eps_capacity_ratio: f64,
    /// Remainder terms omitted from the expansion.
    pub dropped_terms: Vec<String>,
}

fn check_point(n: f64, eps: f64) -> Result<()> {
    if !(n > 1.0) || !n.is_finite() {
        return Err(Error::domain("asymptotic_rate", format!("N must exceed 1, got {n}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::domain("asymptotic_rate", format!("ε must lie in (0, 1), got {eps}")));
    }
    Ok(())
}

/// Evaluates the rate expansion of `spec.regime` with its remainder dropped.
pub fn asymptotic_rate(spec: &PointSpec) -> Result<AsymptoticPoint> {
    let PointSpec { regime, n, eps, snr, .. } = *spec;
    check_point(n, eps)?;
    let ch = ChannelParams::new(snr)?;
    let (c, v) = (ch.capacity, ch.dispersion);
    let first = n * c / (1.0 - eps);
    let (k, log_m, dropped): (Option<u32>, f64, &str) = match regime {
        Regime::K1MaxPower => (
            Some(1),
            n * c - (n * v).sqrt() * q_inverse(eps)? + 0.5 * n.ln(),
            "O(1)",
        ),
        Regime::K1AvgPower => {
            let boosted = snr / (1.0 - eps);
            (
                Some(1),
                n * capacity(boosted)? - (n * n.ln() * dispersion(boosted)?).sqrt(),
                "O(sqrt(N))",
            )
        }
        Regime::FiniteK => {
            let k = spec
                .k
                .filter(|&k| k >= 2)
                .ok_or_else(|| Error::domain("asymptotic_rate", "finiteK needs K ≥ 2"))?;
            let nl = nested_log(k - 1, n)?;
            if nl < 0.0 {
                return Err(Error::domain(
                    "asymptotic_rate",
                    format!("ln_({})({n}) = {nl} is negative", k - 1),
                ));
            }
            (
                Some(k),
                first - (n * nl * v / (1.0 - eps)).sqrt(),
                "O(sqrt(N/ln_(K-1)(N)))",
            )
        }
        Regime::KInfMaxPower => (
            None,
            first - (n * 4.0 * c * ch.ln_j() / (1.0 - eps)).sqrt() - n.ln(),
            "O(1)",
        ),
        Regime::KInfAvgPowerAch => (None, first - n.ln(), "O(1)"),
        Regime::Converse => (None, first + binary_entropy(eps) / (1.0 - eps), ""),
    };
    let rate = log_m / n;
    Ok(AsymptoticPoint {
        regime,
        k,
        n,
        eps,
        snr,
        rate,
        eps_capacity_ratio: rate / ch.eps_capacity(eps),
        dropped_terms: if dropped.is_empty() { Vec::new() } else { vec![dropped.to_string()] },
    })
}

/// `(N C/(1−ε) + h_b(ε)/(1−ε)) / N`.
pub fn converse_rate(n: f64, eps: f64, snr: f64) -> Result<f64> {
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::domain("converse_rate", format!("N must be positive, got {n}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::domain("converse_rate", format!("ε must lie in (0, 1), got {eps}")));
    }
    let c = capacity(snr)?;
    Ok((n * c + binary_entropy(eps)) / ((1.0 - eps) * n))
}
