//! Acceptance suite: one PASS/FAIL line per criterion.

use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;
use vlsf_core::bounds::{asymptotic_rate, converse_rate, lift_bound, petrov_tail, tail_prob_mc, theorem3_eval, PointSpec, Theorem3Config};
use vlsf_core::channel::{a_moments, nested_log, ChannelParams};
use vlsf_core::codebook::{generate_codebook, Schedule};
use vlsf_core::mc::{sample_a, stream_rng, MeanAccumulator};
use vlsf_core::schedule::{design_vlsf_code, k_infinity_inner, kkt_refine, solve_decoding_times};
use vlsf_core::simulator::{explicit_trial, martingale_check, simulate_code, simulate_renewal, MartingaleEstimator, SimConfig};
use vlsf_core::{EvalMode, Regime};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn eps_capacity_ratios() -> Outcome {
    let expected = [(1u32, 0.836), (2, 0.853), (3, 0.922), (4, 0.954)];
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, want) in expected {
        let spec = PointSpec {
            regime: if k == 1 { Regime::K1MaxPower } else { Regime::FiniteK },
            k: Some(k),
            n: 1000.0,
            eps: 1e-3,
            snr: 1.0,
        };
        let got = asymptotic_rate(&spec).map(|p| p.eps_capacity_ratio).unwrap_or(f64::NAN);
        pass &= (got - want).abs() <= 0.002;
        parts.push(format!("K={k} {got:.4} (want {want})"));
    }
    outcome(pass, parts.join(", "))
}

fn nested_log_spot() -> Outcome {
    let v = nested_log(3, 1000.0).unwrap_or(f64::NAN);
    outcome((v - 0.659).abs() <= 0.0005, format!("ln_(3)(1000) = {v:.5}"))
}

fn moment_identities() -> Outcome {
    let trials = 10_000_000u64;
    let mut pass = true;
    let mut parts = Vec::new();
    for snr in [0.5, 1.0, 4.0] {
        let ch = ChannelParams::new(snr).unwrap();
        let mut rng = stream_rng(31, (snr * 100.0) as u64);
        let mut acc = MeanAccumulator::default();
        for _ in 0..trials {
            acc.push(sample_a(&ch, &mut rng));
        }
        let mean_ok = (acc.mean() - ch.capacity).abs() < 4.0 * (ch.dispersion / trials as f64).sqrt();
        let var_rel = acc.variance() / ch.dispersion - 1.0;
        pass &= mean_ok && var_rel.abs() < 0.01;
        parts.push(format!(
            "P={snr}: mean {:.5} vs C {:.5}, var rel err {var_rel:+.4}",
            acc.mean(),
            ch.capacity
        ));
    }
    outcome(pass, parts.join("; "))
}

fn martingale_identity() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [1u64, 5, 20] {
        match martingale_check(n, 1.0, 10_000_000, 41 + n, MartingaleEstimator::default()) {
            Ok(r) => {
                pass &= r.passes;
                parts.push(format!("n={n}: {:.5} ± {:.5} (z = {:+.2})", r.mean.value, r.mean.stderr, r.z));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("n={n}: {e}"));
            }
        }
    }
    outcome(pass, parts.join("; "))
}

fn petrov_consistency() -> Outcome {
    let ch = ChannelParams::new(1.0).unwrap();
    let lower = a_moments(1.0).unwrap().reflected();
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [500u64, 2000, 8000] {
        let nf = n as f64;
        let z = nested_log(2, nf).unwrap().sqrt();
        let threshold = nf * ch.capacity - z * (nf * ch.dispersion).sqrt();
        let mc = tail_prob_mc(n, threshold, 1.0, 10_000_000, 51 + n).unwrap();
        let pt = petrov_tail(n, z, &lower).unwrap();
        let rel = pt / mc.value - 1.0;
        pass &= rel.abs() <= 0.15;
        parts.push(format!("n={n}: petrov {pt:.5}, mc {:.5}, rel {rel:+.4}", mc.value));
    }
    outcome(pass, parts.join("; "))
}

fn bound_dominance() -> Outcome {
    let run = || -> vlsf_core::Result<Outcome> {
        let base = design_vlsf_code(2000.0, 3, 0.05, 1.0)?;
        let design = base.with_messages(1 << 10, true)?;
        let trials = 100_000;
        let sim = simulate_code(&design, &SimConfig::new(trials, 61))?;
        let inner = theorem3_eval(
            &design.inner_schedule()?,
            design.gamma,
            design.log_m,
            design.snr,
            &Theorem3Config::new(trials, 62, EvalMode::Joint),
        )?;
        let bound = lift_bound(inner, design.p_zero)?;
        let eps_sigma = sim.eps_hat.stderr.hypot(bound.eps_stderr);
        let n_sigma = sim.tau_mean.stderr.hypot(bound.n_upper_stderr);
        let eps_ok = sim.eps_hat.value <= bound.eps_upper + 3.0 * eps_sigma;
        let n_ok = sim.tau_mean.value <= bound.n_upper + 3.0 * n_sigma;
        Ok(outcome(
            eps_ok && n_ok,
            format!(
                "times {:?}, γ = {:.3}: eps_hat {:.4} ≤ {:.4}, tau_mean {:.1} ≤ {:.1}",
                design.schedule.times(),
                design.gamma,
                sim.eps_hat.value,
                bound.eps_upper,
                sim.tau_mean.value,
                bound.n_upper
            ),
        ))
    };
    run().unwrap_or_else(|e| outcome(false, e.to_string()))
}

/// Literal stopping rule: at each decoding time recompute every message's
/// information density from scratch with Gaussian log-densities.
fn literal_decoder(codewords: &[Vec<f64>], y: &[f64], times: &[u64], gamma: f64, j_slack: bool, snr: f64) -> (u64, u64) {
    let ln_j = ChannelParams::new(snr).unwrap().ln_j();
    let ln_phi = |x: f64, var: f64| -0.5 * (2.0 * std::f64::consts::PI * var).ln() - x * x / (2.0 * var);
    let mut pieces = 0u32;
    let mut prev = 0u64;
    for (k, &t) in times.iter().enumerate() {
        if t > prev {
            pieces += 1;
        }
        prev = t;
        let threshold = if j_slack { gamma + f64::from(pieces) * ln_j } else { gamma };
        let mut chosen = None;
        for (m, x) in codewords.iter().enumerate() {
            let mut s = 0.0;
            for i in 0..t as usize {
                s += ln_phi(y[i] - x[i], 1.0) - ln_phi(y[i], 1.0 + snr);
            }
            if s >= threshold {
                chosen = Some(m as u64 + 1);
            }
        }
        if let Some(m) = chosen {
            return (t, m);
        }
        if k == times.len() - 1 {
            return (t, 1);
        }
    }
    unreachable!("schedule is non-empty")
}

fn decoder_equivalence() -> Outcome {
    let snr = 1.0;
    let mut schedules = Vec::new();
    for b in 1..=6u64 {
        schedules.push(vec![b]);
        for a in 0..b {
            schedules.push(vec![a, b]);
        }
    }
    let trials = 10_000;
    let mut combos = 0;
    let mut mismatches = 0u64;
    let mut compared = 0u64;
    for m in 1..=4u64 {
        for (si, times) in schedules.iter().enumerate() {
            let schedule = Schedule::new(times.clone()).unwrap();
            let codebook = generate_codebook(m, &schedule, snr, 1000 * m + si as u64).unwrap();
            let cws: Vec<Vec<f64>> = codebook.codewords().map(|c| c.to_vec()).collect();
            for gamma in [-1.0, 0.5, 2.0, 4.0] {
                for j_slack in [false, true] {
                    combos += 1;
                    let mut rng = stream_rng(71, combos);
                    for _ in 0..trials {
                        let w = rng.random_range(1..=m);
                        let noise: Vec<f64> = (0..schedule.last()).map(|_| rng.sample(StandardNormal)).collect();
                        let prod = explicit_trial(&codebook, w, &noise, gamma, j_slack).unwrap();
                        let y: Vec<f64> = cws[w as usize - 1].iter().zip(&noise).map(|(a, b)| a + b).collect();
                        let lit = literal_decoder(&cws, &y, times, gamma, j_slack, snr);
                        compared += 1;
                        mismatches += u64::from((prod.tau, prod.decision) != lit);
                    }
                }
            }
        }
    }
    outcome(
        mismatches == 0,
        format!("{combos} parameter combinations, {compared} trials, {mismatches} mismatches"),
    )
}

fn kkt_refinement() -> Outcome {
    let run = || -> vlsf_core::Result<Outcome> {
        let ch = ChannelParams::new(1.0)?;
        let gamma = 1e4 * ch.capacity - 3.0 * ch.ln_j();
        let schedule = solve_decoding_times(3, gamma, 1.0)?;
        let r = kkt_refine(&schedule, gamma, 1.0)?;
        let pass = r.gap < 0.0 && (r.gap_ratio - 1.0).abs() <= 0.3;
        Ok(outcome(
            pass,
            format!(
                "ñ = {:?}, gap {:.3}, predicted {:.3}, ratio {:.3}",
                schedule.times(),
                r.gap,
                r.predicted_gap,
                r.gap_ratio
            ),
        ))
    };
    run().unwrap_or_else(|e| outcome(false, e.to_string()))
}

fn renewal_lorden() -> Outcome {
    let run = || -> vlsf_core::Result<Outcome> {
        let ch = ChannelParams::new(1.0)?;
        let code = k_infinity_inner(1e4, &ch, 0.0)?;
        let s = simulate_renewal(code.ell, code.gamma, 1.0, 100_000, 81, None)?;
        let half_width = 1.96 * s.tau_mean.stderr;
        let time_ok = s.tau_mean.value <= 1e4 + 3.0 * half_width;
        let lorden_ok = s.xi_mean.value <= s.lorden_bound + 3.0 * 1.96 * s.xi_mean.stderr;
        Ok(outcome(
            time_ok && lorden_ok,
            format!(
                "ℓ = {}, ℓ·E[ξ] = {:.1} ± {:.1} vs 10000, E[ξ] = {:.3} vs Lorden {:.3}",
                code.ell, s.tau_mean.value, half_width, s.xi_mean.value, s.lorden_bound
            ),
        ))
    };
    run().unwrap_or_else(|e| outcome(false, e.to_string()))
}

fn ordering_sanity() -> Outcome {
    let eps = 1e-3;
    let mut pass = true;
    let mut checked = 0;
    let mut skipped = Vec::new();
    for n in [1e3, 1e4, 1e5, 1e6] {
        let conv = converse_rate(n, eps, 1.0).unwrap();
        let mut specs: Vec<PointSpec> = [Regime::K1MaxPower, Regime::K1AvgPower, Regime::KInfMaxPower, Regime::KInfAvgPowerAch]
            .into_iter()
            .map(|regime| PointSpec { regime, k: None, n, eps, snr: 1.0 })
            .collect();
        specs.extend((2..=6).map(|k| PointSpec {
            regime: Regime::FiniteK,
            k: Some(k),
            n,
            eps,
            snr: 1.0,
        }));
        for spec in specs {
            match asymptotic_rate(&spec) {
                Ok(p) => {
                    checked += 1;
                    pass &= conv > p.rate;
                }
                Err(_) => skipped.push(format!("K={} N={n:e}", spec.k.unwrap_or(0))),
            }
        }
    }
    outcome(
        pass,
        format!("{checked} achievability points below the converse; outside domain: {}", skipped.join(", ")),
    )
}

fn main() {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check, Duration); 10] = [
        ("ε-capacity fractions at N=1000", eps_capacity_ratios, Duration::from_secs(1)),
        ("nested-log spot value", nested_log_spot, Duration::from_secs(1)),
        ("moment identities", moment_identities, Duration::from_secs(30)),
        ("martingale identity", martingale_identity, Duration::from_secs(60)),
        ("moderate-deviations consistency", petrov_consistency, Duration::from_secs(120)),
        ("bound dominance", bound_dominance, Duration::from_secs(300)),
        ("brute-force decoder equivalence", decoder_equivalence, Duration::from_secs(60)),
        ("KKT refinement gap", kkt_refinement, Duration::from_secs(10)),
        ("renewal / Lorden check", renewal_lorden, Duration::from_secs(120)),
        ("converse ordering", ordering_sanity, Duration::from_secs(1)),
    ];
    let mut failures = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= *budget;
        let pass = out.pass && in_time;
        failures += usize::from(!pass);
        println!(
            "criterion {:>2} {}: {} ({:.2?}{}) {}",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            name,
            elapsed,
            if in_time { String::new() } else { format!(", over the {budget:?} budget") },
            out.detail
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
