//! Decoding-time selection and code design.
//!
//! Decoding times solve
//!
//! ```text
//! γ + K ln J(P) = n_k C(P) − sqrt(n_k ln_(K−k+1)(n_k) V(P)),   k = 1, …, K,
//! ```
//!
//! one scalar Newton problem per time. [`design_vlsf_code`] wraps this in the
//! decode-at-zero construction; [`kkt_refine`] moves the times to the exact
//! stationary point of the smooth average-decoding-time objective.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::{asymptotic_rate, PointSpec, Regime};
use crate::channel::{nested_log, nested_log_floor, nested_log_with_derivative, normal_pdf, q_function, ChannelParams};
use crate::codebook::Schedule;
use crate::error::{Error, Result};

/// Step halvings allowed per Newton iteration.
pub const MAX_HALVINGS: usize = 30;

const SETNK_RELATIVE_TOL: f64 = 1e-11;
const SETNK_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOutcome {
    pub root: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Damped Newton iteration on `f`, which returns `(f(x), f'(x))`.
///
/// A step is halved (at most [`MAX_HALVINGS`] times) until `|f|` decreases;
/// non-finite values count as no decrease. Stops once `|f(x)| < tol`.
pub fn newton_root<F>(f: F, x0: f64, tol: f64, max_iter: usize) -> Result<NewtonOutcome>
where
    F: Fn(f64) -> (f64, f64),
{
    if !(tol > 0.0) {
        return Err(Error::Validation(format!("tolerance must be positive, got {tol}")));
    }
    let stuck = |iterations, x: f64, fx: f64| Error::NonConvergence {
        iterations,
        last_iterate: x,
        residual: fx.abs(),
    };
    let mut x = x0;
    let (mut fx, mut dfx) = f(x);
    if !fx.is_finite() {
        return Err(stuck(0, x, fx));
    }
    for it in 0..max_iter {
        if fx.abs() < tol {
            return Ok(NewtonOutcome {
                root: x,
                iterations: it,
                residual: fx.abs(),
            });
        }
        if !dfx.is_finite() || dfx == 0.0 {
            return Err(stuck(it, x, fx));
        }
        let mut step = -fx / dfx;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let (fn_, dfn) = f(x + step);
            if fn_.is_finite() && fn_.abs() < fx.abs() {
                x += step;
                fx = fn_;
                dfx = dfn;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(stuck(it + 1, x, fx));
        }
    }
    if fx.abs() < tol {
        Ok(NewtonOutcome {
            root: x,
            iterations: max_iter,
            residual: fx.abs(),
        })
    } else {
        Err(stuck(max_iter, x, fx))
    }
}

/// Left side minus right side of one decoding-time equation at depth `depth`,
/// with its derivative. NaN outside the domain `ln_(depth)(n) ≥ 0`.
fn setnk_residual(depth: u32, n: f64, gamma_eff: f64, ch: &ChannelParams) -> (f64, f64) {
    match nested_log_with_derivative(depth, n) {
        Ok((l, dl)) if l >= 0.0 => {
            let root = (n * l * ch.dispersion).sqrt();
            let value = n * ch.capacity - root - gamma_eff;
            let slope = if root > 0.0 {
                ch.capacity - ch.dispersion * (l + n * dl) / (2.0 * root)
            } else if ch.dispersion == 0.0 {
                ch.capacity
            } else {
                f64::NEG_INFINITY
            };
            (value, slope)
        }
        _ => (f64::NAN, f64::NAN),
    }
}

/// Largest root of `n C − sqrt(n ln_(depth)(n) V) = gamma_eff`.
fn solve_setnk(depth: u32, gamma_eff: f64, ch: &ChannelParams, start: Option<f64>) -> Result<NewtonOutcome> {
    if !(gamma_eff > 0.0) || !gamma_eff.is_finite() {
        return Err(Error::Infeasible(format!(
            "slacked threshold γ + K ln J = {gamma_eff} must be positive"
        )));
    }
    let f = |n: f64| setnk_residual(depth, n, gamma_eff, ch);
    let floor = nested_log_floor(depth);
    let x0 = match start {
        Some(x) => x,
        None => {
            let mut x = (2.0 * gamma_eff / ch.capacity).max(2.0 * floor + 1.0);
            while !(f(x).0 > 0.0) {
                x *= 2.0;
                if x > 1e300 {
                    return Err(Error::Infeasible("decoding-time equation has no root".into()));
                }
            }
            x
        }
    };
    let tol = SETNK_RELATIVE_TOL * gamma_eff.max(1.0);
    let out = newton_root(f, x0, tol, SETNK_MAX_ITER).map_err(|e| {
        Error::Infeasible(format!(
            "no decoding time with ln_({depth}) defined solves the equation for γ' = {gamma_eff}: {e}"
        ))
    })?;
    let (_, slope) = f(out.root);
    if out.root < floor || !(slope > 0.0) {
        return Err(Error::Infeasible(format!(
            "decoding-time root {} lies outside the nested-log domain of depth {depth}",
            out.root
        )));
    }
    Ok(out)
}

/// Real-valued solution of the decoding-time equations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolvedTimes {
    pub times: Vec<f64>,
    /// `|residual| / (γ + K ln J)` for each equation.
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
    pub gamma_eff: f64,
}

/// Solves the `k` decoding-time equations without rounding.
///
/// `starts` optionally seeds each Newton iteration.
pub fn solve_decoding_times_real(k: u32, gamma: f64, channel: &ChannelParams, starts: Option<&[f64]>) -> Result<SolvedTimes> {
    if k == 0 {
        return Err(Error::Validation("K must be at least 1".into()));
    }
    if let Some(s) = starts {
        if s.len() != k as usize {
            return Err(Error::ShapeMismatch(format!("{} starting points for K = {k}", s.len())));
        }
    }
    let gamma_eff = gamma + f64::from(k) * channel.ln_j();
    let mut out = SolvedTimes {
        times: Vec::with_capacity(k as usize),
        residuals: Vec::with_capacity(k as usize),
        iterations: Vec::with_capacity(k as usize),
        gamma_eff,
    };
    for idx in 1..=k {
        let depth = k - idx + 1;
        let sol = solve_setnk(depth, gamma_eff, channel, starts.map(|s| s[idx as usize - 1]))?;
        out.times.push(sol.root);
        out.residuals.push(sol.residual / gamma_eff.abs().max(1.0));
        out.iterations.push(sol.iterations);
    }
    Ok(out)
}

/// Rounds real decoding times: nearest integer for interior times, ceiling for the last.
pub fn round_times(times: &[f64]) -> Vec<u64> {
    let last = times.len().saturating_sub(1);
    times
        .iter()
        .enumerate()
        .map(|(i, &t)| if i == last { t.ceil() as u64 } else { t.round() as u64 })
        .collect()
}

/// Integer decoding times for `k` times and threshold `gamma`.
pub fn solve_decoding_times(k: u32, gamma: f64, snr: f64) -> Result<Schedule> {
    let channel = ChannelParams::new(snr)?;
    let solved = solve_decoding_times_real(k, gamma, &channel, None)?;
    if solved.times.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Infeasible(format!("decoding times are not distinct: {:?}", solved.times)));
    }
    let rounded = round_times(&solved.times);
    Schedule::new(rounded).map_err(|_| Error::Infeasible(format!("decoding times collide after rounding: {:?}", solved.times)))
}

/// Number of messages, which may far exceed any machine integer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageCount {
    Exact(u64),
    Huge { ln: f64 },
}

impl MessageCount {
    /// `⌊e^{ln_m}⌋`, kept symbolic beyond `2^63`.
    pub fn from_ln(ln_m: f64) -> Self {
        if ln_m < 63.0 * std::f64::consts::LN_2 {
            MessageCount::Exact((ln_m.exp().floor() as u64).max(1))
        } else {
            MessageCount::Huge { ln: ln_m }
        }
    }

    pub fn ln(&self) -> f64 {
        match *self {
            MessageCount::Exact(m) => (m as f64).ln(),
            MessageCount::Huge { ln } => ln,
        }
    }

    pub fn exact(&self) -> Option<u64> {
        match *self {
            MessageCount::Exact(m) => Some(m),
            MessageCount::Huge { .. } => None,
        }
    }
}

/// Solver bookkeeping attached to a design.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverMeta {
    pub fixed_point_iterations: usize,
    pub gamma_search_iterations: usize,
    pub newton_iterations: Vec<usize>,
    pub residuals: Vec<f64>,
}

/// Parameters of a VLSF code with a decode-at-zero slot.
///
/// `schedule` starts with the time-zero slot. For the unbounded-times design
/// it holds only that slot and `grid_spacing` gives the uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeDesign {
    /// Number of decoding times including time zero; `None` when unbounded.
    pub k: Option<u32>,
    pub schedule: Schedule,
    /// Unrounded positive decoding times of the inner code.
    pub real_times: Vec<f64>,
    pub grid_spacing: Option<u64>,
    pub gamma: f64,
    pub gamma_offset: f64,
    pub messages: MessageCount,
    pub log_m: f64,
    pub p_zero: f64,
    pub eps_prime: f64,
    pub n_target: f64,
    pub n_prime: f64,
    pub eps_target: f64,
    pub snr: f64,
    /// Rate of the asymptotic expansion at `(N, ε, P)`.
    pub predicted_rate: Option<f64>,
    /// `predicted_rate / (C/(1−ε))`.
    pub predicted_ratio: Option<f64>,
    /// `ln M / N` of this design.
    pub design_rate: f64,
    pub solver: SolverMeta,
    pub dropped_terms: Vec<String>,
    pub warnings: Vec<String>,
}

impl CodeDesign {
    pub fn channel(&self) -> Result<ChannelParams> {
        ChannelParams::new(self.snr)
    }

    /// The inner code's schedule (positive times only).
    pub fn inner_schedule(&self) -> Result<Schedule> {
        if self.grid_spacing.is_some() {
            return Err(Error::Validation("the unbounded-times design has no finite schedule".into()));
        }
        self.schedule.tail()
    }

    /// Caps the message count at `m`; with `resolve_gamma` the threshold is
    /// re-derived as `ln m + ln N'` while the decoding times stay fixed.
    pub fn with_messages(&self, m: u64, resolve_gamma: bool) -> Result<CodeDesign> {
        if m == 0 {
            return Err(Error::Validation("message count must be at least 1".into()));
        }
        let mut d = self.clone();
        d.messages = MessageCount::Exact(m);
        d.log_m = (m as f64).ln();
        d.design_rate = d.log_m / d.n_target;
        d.warnings.push(format!("message count overridden to {m}"));
        if resolve_gamma {
            d.gamma = d.log_m + d.n_prime.ln();
            d.warnings.push(format!("threshold re-solved to ln M + ln N' = {}", d.gamma));
        }
        Ok(d)
    }
}

fn validate_target(n_target: f64, eps: f64) -> Result<()> {
    if !(n_target > 1.0) || !n_target.is_finite() {
        return Err(Error::Validation(format!("target N must exceed 1, got {n_target}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Validation(format!("ε must lie in (0, 1), got {eps}")));
    }
    Ok(())
}

/// `p = (ε − ε')/(1 − ε')`, with rounding noise below zero clamped.
fn p_zero(eps: f64, eps_prime: f64) -> Result<f64> {
    let p = (eps - eps_prime) / (1.0 - eps_prime);
    if p < -1e-12 {
        return Err(Error::Infeasible(format!(
            "target ε = {eps} is below the inner error budget ε' = {eps_prime}"
        )));
    }
    Ok(p.max(0.0))
}

/// Smooth average-decoding-time model `n_1 + Σ (n_{i+1} − n_i) Q(g(n_i))`.
fn model_average_time(times: &[f64], gamma_eff: f64, ch: &ChannelParams) -> f64 {
    let g = |n: f64| (n * ch.capacity - gamma_eff) / (n * ch.dispersion).sqrt();
    times[0]
        + times
            .windows(2)
            .map(|w| (w[1] - w[0]) * q_function(g(w[0])))
            .sum::<f64>()
}

/// Designs a `K`-time code (time zero plus `K − 1` inner times) with average
/// decoding time `n_target` and average error probability `eps`.
///
/// The inner code has error budget `ε' = 1/sqrt(N' ln N')` and average time
/// `N' = N(1 − ε')/(1 − ε)`. Its threshold is chosen so that the modelled
/// average decoding time equals `N'`, and `ln M = γ − ln N'`.
pub fn design_vlsf_code(n_target: f64, k: u32, eps: f64, snr: f64) -> Result<CodeDesign> {
    validate_target(n_target, eps)?;
    if k < 2 {
        return Err(Error::Validation(format!("design needs K ≥ 2 decoding times, got {k}")));
    }
    let ch = ChannelParams::new(snr)?;
    let mut warnings = Vec::new();

    let mut n_prime = n_target / (1.0 - eps);
    let mut fixed_point_iterations = 0;
    for it in 1..=200 {
        if !(n_prime > std::f64::consts::E) {
            return Err(Error::Infeasible(format!("N' = {n_prime} is too small")));
        }
        let eps_prime = 1.0 / (n_prime * n_prime.ln()).sqrt();
        let next = n_target * (1.0 - eps_prime) / (1.0 - eps);
        fixed_point_iterations = it;
        let done = (next - n_prime).abs() <= 1e-14 * n_prime;
        n_prime = next;
        if done {
            break;
        }
    }
    let eps_prime = 1.0 / (n_prime * n_prime.ln()).sqrt();
    let p = p_zero(eps, eps_prime)?;
    if p > 0.999 {
        warnings.push(format!("decode-at-zero probability p = {p} exceeds 0.999"));
    }

    let k_inner = k - 1;
    let evaluate = |gamma_eff: f64| -> Option<(SolvedTimes, f64)> {
        let gamma = gamma_eff - f64::from(k_inner) * ch.ln_j();
        let solved = solve_decoding_times_real(k_inner, gamma, &ch, None).ok()?;
        let n = model_average_time(&solved.times, gamma_eff, &ch);
        Some((solved, n))
    };
    let mut lo = 0.0;
    let mut hi = 2.0 * n_prime * ch.capacity + 50.0;
    match evaluate(hi) {
        Some((_, n)) if n >= n_prime => {}
        _ => return Err(Error::Infeasible(format!("cannot bracket the threshold for N' = {n_prime}"))),
    }
    let mut gamma_search_iterations = 0;
    while hi - lo > 1e-13 * hi && gamma_search_iterations < 300 {
        gamma_search_iterations += 1;
        let mid = 0.5 * (lo + hi);
        match evaluate(mid) {
            Some((_, n)) if n >= n_prime => hi = mid,
            _ => lo = mid,
        }
    }
    let (solved, n_model) = evaluate(hi).expect("upper bracket stays feasible");
    if (n_model - n_prime).abs() > 1e-6 * n_prime {
        return Err(Error::Infeasible(format!(
            "N = {n_target} is too small for K = {k}: the smallest feasible threshold already gives average time {n_model} > N' = {n_prime}"
        )));
    }
    let gamma = hi - f64::from(k_inner) * ch.ln_j();
    let log_m = gamma - n_prime.ln();
    if log_m < 0.0 {
        return Err(Error::Infeasible(format!("ln M = {log_m} is negative")));
    }

    let mut times = vec![0u64];
    for t in round_times(&solved.times) {
        if t <= *times.last().expect("non-empty") {
            warnings.push(format!("decoding time {t} merged with its predecessor after rounding"));
        } else {
            times.push(t);
        }
    }
    let schedule = Schedule::new(times)?;
    let k_final = schedule.k() as u32;
    let (predicted_rate, predicted_ratio) = match asymptotic_rate(&PointSpec {
        regime: Regime::FiniteK,
        k: Some(k),
        n: n_target,
        eps,
        snr,
    }) {
        Ok(p) => (Some(p.rate), Some(p.eps_capacity_ratio)),
        Err(e) => {
            warnings.push(format!("no asymptotic prediction: {e}"));
            (None, None)
        }
    };

    Ok(CodeDesign {
        k: Some(k_final),
        schedule,
        real_times: solved.times.clone(),
        grid_spacing: None,
        gamma,
        gamma_offset: 0.0,
        messages: MessageCount::from_ln(log_m),
        log_m,
        p_zero: p,
        eps_prime,
        n_target,
        n_prime,
        eps_target: eps,
        snr,
        predicted_rate,
        predicted_ratio,
        design_rate: log_m / n_target,
        solver: SolverMeta {
            fixed_point_iterations,
            gamma_search_iterations,
            newton_iterations: solved.iterations,
            residuals: solved.residuals,
        },
        dropped_terms: vec![
            "O(sqrt(N/ln_(K-1)(N))) in predicted_rate".into(),
            "tail probabilities modelled as Q(g(n)) when matching N'".into(),
        ],
        warnings,
    })
}

/// Inner code of the unbounded-times construction at average time `n_prime`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KInfinityCode {
    pub n_prime: f64,
    pub ell: u64,
    pub gamma: f64,
    pub log_m: f64,
    /// Lower bound `C − ln J/ℓ` on the mean block increment.
    pub drift: f64,
}

/// Grid spacing `round(sqrt(N' ln J / C))`, at least 1.
pub fn grid_spacing(n_prime: f64, channel: &ChannelParams) -> u64 {
    let ell = (n_prime * channel.ln_j() / channel.capacity).sqrt().round();
    if ell >= 1.0 {
        ell as u64
    } else {
        1
    }
}

/// `ℓ`, `γ = N'C − ℓC − (N'/ℓ) ln J + offset` and `ln M = γ − ln N'`.
pub fn k_infinity_inner(n_prime: f64, channel: &ChannelParams, gamma_offset: f64) -> Result<KInfinityCode> {
    if !(n_prime > 1.0) || !n_prime.is_finite() {
        return Err(Error::Validation(format!("N' must exceed 1, got {n_prime}")));
    }
    let ell = grid_spacing(n_prime, channel);
    let l = ell as f64;
    let gamma = n_prime * channel.capacity - l * channel.capacity - n_prime / l * channel.ln_j() + gamma_offset;
    let log_m = gamma - n_prime.ln();
    if !(gamma > 0.0) || log_m < 0.0 {
        return Err(Error::Infeasible(format!("N' = {n_prime} gives threshold {gamma} and ln M = {log_m}")));
    }
    Ok(KInfinityCode {
        n_prime,
        ell,
        gamma,
        log_m,
        drift: channel.capacity - channel.ln_j() / l,
    })
}

/// Unbounded-times design with error budget `ε' = 1/N'` for the inner code.
pub fn k_infinity_design(n_target: f64, eps: f64, snr: f64, gamma_offset: f64) -> Result<CodeDesign> {
    validate_target(n_target, eps)?;
    let ch = ChannelParams::new(snr)?;
    // N = (1 − p)N' with ε' = 1/N' gives (1 − ε)N'² − N N' + N = 0.
    let disc = n_target * n_target - 4.0 * (1.0 - eps) * n_target;
    if disc < 0.0 {
        return Err(Error::Infeasible(format!("N = {n_target} is too small for ε' = 1/N'")));
    }
    let n_prime = (n_target + disc.sqrt()) / (2.0 * (1.0 - eps));
    let eps_prime = 1.0 / n_prime;
    let p = p_zero(eps, eps_prime)?;
    let inner = k_infinity_inner(n_prime, &ch, gamma_offset)?;
    let mut warnings = Vec::new();
    if p > 0.999 {
        warnings.push(format!("decode-at-zero probability p = {p} exceeds 0.999"));
    }
    if inner.drift <= 0.0 {
        warnings.push(format!("block drift C − ln J/ℓ = {} is not positive", inner.drift));
    }
    let predicted = asymptotic_rate(&PointSpec {
        regime: Regime::KInfMaxPower,
        k: None,
        n: n_target,
        eps,
        snr,
    })?;
    Ok(CodeDesign {
        k: None,
        schedule: Schedule::new(vec![0])?,
        real_times: Vec::new(),
        grid_spacing: Some(inner.ell),
        gamma: inner.gamma,
        gamma_offset,
        messages: MessageCount::from_ln(inner.log_m),
        log_m: inner.log_m,
        p_zero: p,
        eps_prime,
        n_target,
        n_prime,
        eps_target: eps,
        snr,
        predicted_rate: Some(predicted.rate),
        predicted_ratio: Some(predicted.eps_capacity_ratio),
        design_rate: inner.log_m / n_target,
        solver: SolverMeta::default(),
        dropped_terms: vec!["O(1) in predicted_rate".into()],
        warnings,
    })
}

/// First-order refinement of decoding times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// Starting times; the last entry is held fixed.
    pub n_tilde: Vec<f64>,
    pub n_star: Vec<f64>,
    pub delta_n: Vec<f64>,
    pub g_values: Vec<f64>,
    pub f_values: Vec<f64>,
    pub big_f_values: Vec<f64>,
    pub n_of_n_tilde: f64,
    pub n_of_n_star: f64,
    pub gap: f64,
    pub l_constant: f64,
    /// `−L sqrt(ñ₁ / ln_(K)(ñ₁))`.
    pub predicted_gap: f64,
    pub gap_ratio: f64,
    /// Gradient of the objective at `n_star`.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    /// Whether every `|Δn_i| ≤ 10 sqrt(ñ_i)`.
    pub delta_n_order_ok: bool,
    pub warnings: Vec<String>,
}

struct Smooth<'a> {
    ch: &'a ChannelParams,
    gamma: f64,
}

impl Smooth<'_> {
    fn g(&self, n: f64) -> f64 {
        (n * self.ch.capacity - self.gamma) / (n * self.ch.dispersion).sqrt()
    }

    fn g1(&self, n: f64) -> f64 {
        let sv = self.ch.dispersion.sqrt();
        self.ch.capacity / (2.0 * n.sqrt() * sv) + self.gamma / (2.0 * n.powf(1.5) * sv)
    }

    fn g2(&self, n: f64) -> f64 {
        let sv = self.ch.dispersion.sqrt();
        -self.ch.capacity / (4.0 * n.powf(1.5) * sv) - 3.0 * self.gamma / (4.0 * n.powf(2.5) * sv)
    }

    /// `F(n) = 1 − Q(g(n))`.
    fn big_f(&self, n: f64) -> f64 {
        q_function(-self.g(n))
    }

    fn f(&self, n: f64) -> f64 {
        normal_pdf(self.g(n)) * self.g1(n)
    }

    fn f_prime(&self, n: f64) -> f64 {
        let (g, g1) = (self.g(n), self.g1(n));
        normal_pdf(g) * (-g * g1 * g1 + self.g2(n))
    }

    fn objective(&self, n: &[f64]) -> f64 {
        n[0] + n.windows(2).map(|w| (w[1] - w[0]) * q_function(self.g(w[0]))).sum::<f64>()
    }

    /// Gradient in the free coordinates `n[..K−1]`.
    fn gradient(&self, n: &[f64]) -> Vec<f64> {
        (0..n.len() - 1)
            .map(|k| {
                let prev = if k == 0 { 0.0 } else { self.big_f(n[k - 1]) };
                self.big_f(n[k]) - prev - (n[k + 1] - n[k]) * self.f(n[k])
            })
            .collect()
    }

    fn hessian(&self, n: &[f64]) -> DMatrix<f64> {
        let m = n.len() - 1;
        DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                2.0 * self.f(n[i]) - (n[i + 1] - n[i]) * self.f_prime(n[i])
            } else if j == i + 1 {
                -self.f(n[i])
            } else if i == j + 1 {
                -self.f(n[j])
            } else {
                0.0
            }
        })
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves the stationarity conditions of the smooth objective
/// `N(n) = n_1 + Σ (n_{i+1} − n_i) Q(g(n_i))` over `n_1, …, n_{K−1}` with
/// `n_K` fixed, starting from `times`. Uses `γ + K ln J` inside `g`.
pub fn kkt_refine_real(times: &[f64], gamma: f64, channel: &ChannelParams) -> Result<KktReport> {
    let k = times.len();
    if k < 2 {
        return Err(Error::Validation("refinement needs at least two decoding times".into()));
    }
    if !(times[0] > 0.0) || times.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Validation(format!("times must be positive and increasing: {times:?}")));
    }
    let gamma_eff = gamma + k as f64 * channel.ln_j();
    let s = Smooth { ch: channel, gamma: gamma_eff };
    let mut n = times.to_vec();
    let mut grad = s.gradient(&n);
    let mut iterations = 0;
    let mut warnings = Vec::new();
    const TOL: f64 = 1e-12;
    while max_abs(&grad) >= TOL && iterations < 100 {
        iterations += 1;
        let h = s.hessian(&n);
        let rhs = -DVector::from_column_slice(&grad);
        let step = h.lu().solve(&rhs).ok_or_else(|| Error::SystemNonConvergence {
            iterations,
            residuals: grad.clone(),
        })?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let mut trial = n.clone();
            for (t, d) in trial.iter_mut().zip(step.iter()) {
                *t += scale * d;
            }
            let ordered = trial[0] > 0.0 && trial.windows(2).all(|w| w[0] < w[1]);
            if ordered {
                let tg = s.gradient(&trial);
                if max_abs(&tg) < max_abs(&grad) {
                    n = trial;
                    grad = tg;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if max_abs(&grad) >= TOL {
        if max_abs(&grad) < 1e-8 {
            warnings.push(format!("stalled at gradient {:e}", max_abs(&grad)));
        } else {
            return Err(Error::SystemNonConvergence { iterations, residuals: grad });
        }
    }

    let free = k - 1;
    let delta_n: Vec<f64> = (0..free).map(|i| n[i] - times[i]).collect();
    let delta_n_order_ok = delta_n.iter().zip(times).all(|(d, t)| d.abs() <= 10.0 * t.sqrt());
    if !delta_n_order_ok {
        warnings.push("a correction exceeds 10·sqrt(n); the O(sqrt(n)) assumption fails".into());
    }
    let n_of_n_tilde = s.objective(times);
    let n_of_n_star = s.objective(&n);
    let l_constant = ((2.0 * std::f64::consts::PI).sqrt().ln() + 1.0 / (2.0 * std::f64::consts::PI).sqrt() - 1.0)
        * channel.dispersion.sqrt()
        / channel.capacity;
    let predicted_gap = match nested_log(k as u32, times[0]) {
        Ok(l) if l > 0.0 => -l_constant * (times[0] / l).sqrt(),
        _ => {
            warnings.push(format!("ln_({k})(ñ₁) is not positive; no predicted gap"));
            f64::NAN
        }
    };
    let gap = n_of_n_star - n_of_n_tilde;
    Ok(KktReport {
        n_tilde: times.to_vec(),
        g_values: n[..free].iter().map(|&x| s.g(x)).collect(),
        f_values: n[..free].iter().map(|&x| s.f(x)).collect(),
        big_f_values: n[..free].iter().map(|&x| s.big_f(x)).collect(),
        n_star: n,
        delta_n,
        n_of_n_tilde,
        n_of_n_star,
        gap,
        l_constant,
        predicted_gap,
        gap_ratio: gap / predicted_gap,
        residuals: grad,
        iterations,
        delta_n_order_ok,
        warnings,
    })
}

/// [`kkt_refine_real`] on an integer schedule.
pub fn kkt_refine(schedule: &Schedule, gamma: f64, snr: f64) -> Result<KktReport> {
    let ch = ChannelParams::new(snr)?;
    let times: Vec<f64> = schedule.times().iter().map(|&t| t as f64).collect();
    kkt_refine_real(&times, gamma, &ch)
}

/// Comparison of the design's inner error budget with the budget that
/// minimises the modelled average decoding time at the same message count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsPrimeDiagnostic {
    pub eps_prime_design: f64,
    pub eps_prime_star: f64,
    pub gamma_star: f64,
    pub n_last_star: f64,
    /// Modelled average decoding time at the design's threshold and last time.
    pub n_design: f64,
    /// Minimum of the same model.
    pub n_star: f64,
    pub relative_gap: f64,
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let eval = |x: f64| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (eval(c), eval(d));
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = eval(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Report-only check of the inner error budget of a finite-`K` design.
///
/// With `ln M` fixed, the modelled average time
/// `N'(γ, n_K)(1 − ε)/(1 − ε'(γ, n_K))`, `ε' = Q(g(n_K)) + M e^{−γ}`, is
/// minimised over `(γ, n_K)` by nested golden-section searches; interior
/// times follow the decoding-time equations at each `γ`.
pub fn eps_prime_diagnostic(design: &CodeDesign) -> Result<EpsPrimeDiagnostic> {
    if design.grid_spacing.is_some() {
        return Err(Error::Validation("diagnostic applies to finite-K designs".into()));
    }
    let ch = design.channel()?;
    let k_inner = design.real_times.len() as u32;
    let eps = design.eps_target;
    let log_m = design.log_m;
    let model = |gamma: f64, n_last: f64| -> f64 {
        let gamma_eff = gamma + f64::from(k_inner) * ch.ln_j();
        let mut times = if k_inner > 1 {
            match solve_decoding_times_real(k_inner, gamma, &ch, None) {
                Ok(s) => s.times[..k_inner as usize - 1].to_vec(),
                Err(_) => return f64::INFINITY,
            }
        } else {
            Vec::new()
        };
        if times.last().is_some_and(|&t| n_last <= t) || n_last <= 0.0 {
            return f64::INFINITY;
        }
        times.push(n_last);
        let g = (n_last * ch.capacity - gamma_eff) / (n_last * ch.dispersion).sqrt();
        let eps_p = q_function(g) + (log_m - gamma).exp();
        if !(eps_p < 1.0) {
            return f64::INFINITY;
        }
        model_average_time(&times, gamma_eff, &ch) * (1.0 - eps) / (1.0 - eps_p)
    };
    let last = *design.real_times.last().expect("finite design has inner times");
    let best_last = |gamma: f64| golden_min(|x| model(gamma, x), 0.5 * last, 2.0 * last, 120);
    let spread = 10.0 * (design.n_prime * ch.dispersion).sqrt();
    let (gamma_star, n_star) = golden_min(|g| best_last(g).1, (log_m + 1.0).max(design.gamma - spread), design.gamma + spread, 120);
    let (n_last_star, _) = best_last(gamma_star);
    let gamma_eff = gamma_star + f64::from(k_inner) * ch.ln_j();
    let g = (n_last_star * ch.capacity - gamma_eff) / (n_last_star * ch.dispersion).sqrt();
    let n_design = model(design.gamma, last);
    Ok(EpsPrimeDiagnostic {
        eps_prime_design: design.eps_prime,
        eps_prime_star: q_function(g) + (log_m - gamma_star).exp(),
        gamma_star,
        n_last_star,
        n_design,
        n_star,
        relative_gap: (n_design - n_star) / n_star,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ch1() -> ChannelParams {
        ChannelParams::new(1.0).unwrap()
    }

    #[test]
    fn newton_examples() {
        let lin = newton_root(|x| (x - 5.0, 1.0), 0.0, 1e-12, 10).unwrap();
        assert_eq!(lin.root, 5.0);
        assert_eq!(lin.iterations, 1);

        let r = newton_root(|x| (x + x.sqrt() - 100.0, 1.0 + 0.5 / x.sqrt()), 100.0, 1e-12, 50).unwrap();
        // bisection oracle
        let (mut a, mut b) = (0.0f64, 100.0f64);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m + m.sqrt() < 100.0 {
                a = m
            } else {
                b = m
            }
        }
        assert_abs_diff_eq!(r.root, a, epsilon = 1e-9);
        assert_abs_diff_eq!(r.root, 90.4875, epsilon = 1e-4);

        let flat = newton_root(|x| (x * x + 1.0, 2.0 * x), 0.0, 1e-12, 50);
        assert!(matches!(flat, Err(Error::NonConvergence { .. })));
        let no_root = newton_root(|x| (x * x + 1.0, 2.0 * x), 3.0, 1e-12, 50);
        assert!(matches!(no_root, Err(Error::NonConvergence { .. })));
        assert!(newton_root(|x| (x, 1.0), 1.0, 0.0, 5).is_err());
    }

    #[test]
    fn asymptotic_inverse_of_x_plus_f() {
        // x + a sqrt(x / ln x) = y  ⇒  x = y − f(y)(1 + o(1))
        let a = 0.375f64.sqrt() / ((2.0 * std::f64::consts::PI).sqrt() * ch1().capacity);
        let f = |x: f64| a * (x / x.ln()).sqrt();
        let df = |x: f64| a * 0.5 / (x / x.ln()).sqrt() * (x.ln() - 1.0) / (x.ln() * x.ln());
        let y = 1e6;
        let r = newton_root(|x| (x + f(x) - y, 1.0 + df(x)), y, 1e-9, 50).unwrap();
        assert!((r.root - (y - f(y))).abs() / f(y) < 0.05);
    }

    #[test]
    fn setnk_example_k2() {
        let ch = ch1();
        let n = 1000.0f64;
        let gamma = n * ch.capacity - (n * n.ln() * ch.dispersion).sqrt() - 2.0 * ch.ln_j();
        let s = solve_decoding_times(2, gamma, 1.0).unwrap();
        assert!((s.times()[1] as f64 - 1000.0).abs() <= 1.0);
        let real = solve_decoding_times_real(2, gamma, &ch, None).unwrap();
        assert_abs_diff_eq!(real.times[1], 1000.0, epsilon = 1e-6);
    }

    #[test]
    fn setnk_residuals_and_well_posedness() {
        let ch = ch1();
        for (k, n) in [(1u32, 500.0), (2, 2000.0), (3, 1e4), (4, 1e7), (3, 1e6)] {
            let gamma = n * ch.capacity;
            let s = solve_decoding_times_real(k, gamma, &ch, None).unwrap();
            assert!(s.times.windows(2).all(|w| w[0] < w[1]));
            for (i, &t) in s.times.iter().enumerate() {
                let depth = k - i as u32;
                let (res, _) = setnk_residual(depth, t, s.gamma_eff, &ch);
                assert!(res.abs() / s.gamma_eff < 1e-6);
            }
            for factor in [0.9, 1.1] {
                let starts: Vec<f64> = s.times.iter().map(|t| t * factor).collect();
                let again = solve_decoding_times_real(k, gamma, &ch, Some(&starts)).unwrap();
                for (a, b) in again.times.iter().zip(&s.times) {
                    assert!((a - b).abs() / b < 1e-4);
                }
            }
        }
    }

    #[test]
    fn setnk_gaps_follow_nested_log_differences() {
        let ch = ch1();
        for (k, n) in [(2u32, 1e4), (3, 1e5), (3, 1e6)] {
            let s = solve_decoding_times_real(k, n * ch.capacity, &ch, None).unwrap();
            for i in 0..(k as usize - 1) {
                let ni = s.times[i];
                let depth = k - i as u32;
                let hi = nested_log(depth - 1, ni).unwrap_or(ni.ln());
                let hi = if depth == 1 { ni.ln() } else { hi };
                let lo = nested_log(depth, ni).unwrap();
                let predicted = ((ni * hi * ch.dispersion).sqrt() - (ni * lo * ch.dispersion).sqrt()) / ch.capacity;
                let actual = s.times[i + 1] - ni;
                assert!((actual / predicted - 1.0).abs() < 0.2, "k={k} n={n} i={i}: {actual} vs {predicted}");
            }
        }
    }

    #[test]
    fn setnk_zero_dispersion_stub() {
        let stub = ChannelParams {
            dispersion: 0.0,
            ..ch1()
        };
        let gamma = 300.0;
        let s = solve_decoding_times_real(3, gamma, &stub, None).unwrap();
        let expected = (gamma + 3.0 * stub.ln_j()) / stub.capacity;
        for t in s.times {
            assert_abs_diff_eq!(t, expected, epsilon = 1e-6 * expected);
        }
    }

    #[test]
    fn setnk_infeasible_cases() {
        assert!(matches!(solve_decoding_times(3, -100.0, 1.0), Err(Error::Infeasible(_))));
        // ln_4 needs n ≥ e^(e^e) ≈ 3.8e6; with a tiny threshold the root would sit below
        assert!(matches!(solve_decoding_times(4, 10.0, 1.0), Err(Error::Infeasible(_))));
        assert!(solve_decoding_times(0, 10.0, 1.0).is_err());
    }

    #[test]
    fn design_examples() {
        // The inner budget 1/sqrt(N' ln N') ≈ 0.012 exceeds ε here.
        assert!(matches!(design_vlsf_code(1000.0, 4, 1e-3, 1.0), Err(Error::Infeasible(_))));
        let predicted = asymptotic_rate(&PointSpec {
            regime: Regime::FiniteK,
            k: Some(4),
            n: 1000.0,
            eps: 1e-3,
            snr: 1.0,
        })
        .unwrap();
        assert_abs_diff_eq!(predicted.eps_capacity_ratio, 0.954, epsilon = 0.002);

        let d = design_vlsf_code(1000.0, 4, 0.05, 1.0).unwrap();
        assert_eq!(d.schedule.times()[0], 0);
        assert_eq!(d.k, Some(4));
        assert!(d.p_zero >= 0.0 && d.p_zero < 1.0);
        assert!(d.eps_prime < d.eps_target);
        assert_abs_diff_eq!(d.log_m, d.gamma - d.n_prime.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(d.n_target, (1.0 - d.p_zero) * d.n_prime, epsilon = 1e-9 * d.n_target);
        assert!(d.solver.residuals.iter().all(|r| *r < 1e-6));
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(serde_json::from_str::<CodeDesign>(&json).unwrap(), d);
    }

    #[test]
    fn design_eps_at_budget_gives_no_randomisation() {
        let n = 5000.0f64;
        let eps = 1.0 / (n * n.ln()).sqrt();
        let d = design_vlsf_code(n, 3, eps, 1.0).unwrap();
        assert!(d.p_zero.abs() < 1e-9);
        assert_abs_diff_eq!(d.n_prime, n, epsilon = 1e-6);
        assert!(matches!(design_vlsf_code(5000.0, 3, 1e-5, 1.0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn design_high_eps_warns() {
        let d = design_vlsf_code(1000.0, 3, 0.9995, 1.0).unwrap();
        assert!(d.p_zero > 0.999);
        assert!(!d.warnings.is_empty());
    }

    #[test]
    fn design_ordering() {
        for n in [1e3, 1e4, 1e5] {
            for k in [3, 4] {
                let d = design_vlsf_code(n, k, 0.05, 1.0).unwrap();
                let t = &d.real_times;
                assert!(t[0] < d.n_prime, "N={n} K={k}");
                assert!(t[1..].iter().all(|&x| x > d.n_prime), "N={n} K={k}");
                assert!(d.schedule.times()[1] > 0);
            }
        }
    }

    #[test]
    fn message_count_override() {
        let d = design_vlsf_code(2000.0, 3, 0.05, 1.0).unwrap();
        assert!(d.messages.exact().is_none());
        let capped = d.with_messages(1024, true).unwrap();
        assert_eq!(capped.messages, MessageCount::Exact(1024));
        assert_abs_diff_eq!(capped.gamma, 1024f64.ln() + d.n_prime.ln(), epsilon = 1e-12);
        assert_eq!(capped.schedule, d.schedule);
        let kept = d.with_messages(1024, false).unwrap();
        assert_eq!(kept.gamma, d.gamma);
        assert_eq!(MessageCount::from_ln(0.0), MessageCount::Exact(1));
        assert_eq!(MessageCount::from_ln(1024f64.ln() + 1e-12), MessageCount::Exact(1024));
    }

    #[test]
    fn k_infinity_examples() {
        let ch = ch1();
        assert_eq!(grid_spacing(1e4, &ch), 293);
        let inner = k_infinity_inner(1e4, &ch, 0.0).unwrap();
        assert_eq!(inner.ell, 293);
        let l = 293.0;
        assert_abs_diff_eq!(inner.gamma, 1e4 * ch.capacity - l * ch.capacity - 1e4 / l * ch.ln_j(), epsilon = 1e-9);
        let stub = ChannelParams { j_constant: 1.0, ..ch };
        assert_eq!(grid_spacing(1e4, &stub), 1);

        let d = k_infinity_design(1e4, 1e-3, 1.0, 0.0).unwrap();
        assert!(d.predicted_rate.unwrap() < crate::bounds::converse_rate(1e4, 1e-3, 1.0).unwrap());
        assert_abs_diff_eq!(d.n_target, (1.0 - d.p_zero) * d.n_prime, epsilon = 1e-6);
        assert_abs_diff_eq!(d.eps_prime, 1.0 / d.n_prime, epsilon = 1e-15);
        assert!(d.inner_schedule().is_err());
        assert!(k_infinity_design(2.0, 1e-3, 1.0, 0.0).is_err());
    }

    #[test]
    fn kkt_single_free_time() {
        let ch = ch1();
        let s = solve_decoding_times_real(2, 3000.0 * ch.capacity, &ch, None).unwrap();
        let r = kkt_refine_real(&s.times, 3000.0 * ch.capacity, &ch).unwrap();
        assert!(r.residuals[0].abs() < 1e-6);
        // F(n₁) = (n₂ − n₁) f(n₁)
        assert_abs_diff_eq!(r.big_f_values[0], (r.n_star[1] - r.n_star[0]) * r.f_values[0], epsilon = 1e-9);
        assert!(r.n_of_n_star <= r.n_of_n_tilde + 1e-9);
    }

    #[test]
    fn kkt_three_times() {
        let ch = ch1();
        let mut prev_ratio = f64::INFINITY;
        for n in [1e4, 1e5, 1e6] {
            let gamma = n * ch.capacity - 3.0 * ch.ln_j();
            let s = solve_decoding_times_real(3, gamma, &ch, None).unwrap();
            let r = kkt_refine_real(&s.times, gamma, &ch).unwrap();
            assert!(r.residuals.iter().all(|x| x.abs() < 1e-6));
            assert!(r.n_of_n_star <= r.n_of_n_tilde + 1e-9);
            assert!(r.delta_n[0] < 0.0);
            let ratio = r.delta_n[1].abs() / r.delta_n[0].abs();
            assert!(ratio < 0.5, "N={n}: {:?}", r.delta_n);
            assert!(ratio < prev_ratio);
            prev_ratio = ratio;
            assert!(r.delta_n_order_ok);
        }
    }

    #[test]
    fn kkt_rejects_bad_input() {
        let ch = ch1();
        assert!(kkt_refine_real(&[100.0], 10.0, &ch).is_err());
        assert!(kkt_refine_real(&[0.0, 100.0], 10.0, &ch).is_err());
        assert!(kkt_refine_real(&[200.0, 100.0], 10.0, &ch).is_err());
    }

    #[test]
    fn eps_prime_diagnostic_runs() {
        let d = design_vlsf_code(1e4, 3, 0.01, 1.0).unwrap();
        let r = eps_prime_diagnostic(&d).unwrap();
        assert!(r.n_star <= r.n_design + 1e-6 * r.n_design);
        assert!(r.eps_prime_star > 0.0 && r.eps_prime_star < 1.0);
    }
}
