//! Desk-scale invariant checks with small trial counts.

use serde::Serialize;
use vlsf_core::bounds::{asymptotic_rate, converse_rate, lift_bound, petrov_tail, tail_prob_mc, theorem3_eval, PointSpec, Theorem3Config};
use vlsf_core::channel::{a_moments, nested_log, ChannelParams};
use vlsf_core::mc::{sample_a, stream_rng, MeanAccumulator};
use vlsf_core::schedule::{design_vlsf_code, k_infinity_inner, kkt_refine, solve_decoding_times};
use vlsf_core::simulator::{martingale_check, simulate_code, simulate_renewal, MartingaleEstimator, SimConfig};
use vlsf_core::{EvalMode, Regime, Result};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match f() {
        Ok((pass, detail)) => Check { name, pass, detail },
        Err(e) => Check {
            name,
            pass: false,
            detail: e.to_string(),
        },
    }
}

pub fn run(seed: u64) -> Vec<Check> {
    vec![
        check("eps_capacity_ratios", || {
            let mut pass = true;
            let mut got = Vec::new();
            for (k, want) in [(1u32, 0.836), (2, 0.853), (3, 0.922), (4, 0.954)] {
                let r = asymptotic_rate(&PointSpec {
                    regime: if k == 1 { Regime::K1MaxPower } else { Regime::FiniteK },
                    k: Some(k),
                    n: 1000.0,
                    eps: 1e-3,
                    snr: 1.0,
                })?
                .eps_capacity_ratio;
                pass &= (r - want).abs() <= 0.002;
                got.push(format!("{r:.4}"));
            }
            Ok((pass, got.join(" ")))
        }),
        check("nested_log", || {
            let v = nested_log(3, 1000.0)?;
            Ok(((v - 0.659).abs() <= 0.0005, format!("{v:.5}")))
        }),
        check("a_moments", || {
            let ch = ChannelParams::new(1.0)?;
            let mut rng = stream_rng(seed, 1);
            let mut acc = MeanAccumulator::default();
            let n = 1_000_000u64;
            for _ in 0..n {
                acc.push(sample_a(&ch, &mut rng));
            }
            let ok = (acc.mean() - ch.capacity).abs() < 4.0 * (ch.dispersion / n as f64).sqrt()
                && (acc.variance() / ch.dispersion - 1.0).abs() < 0.02;
            Ok((ok, format!("mean {:.5} var {:.5}", acc.mean(), acc.variance())))
        }),
        check("martingale", || {
            let mut pass = true;
            let mut parts = Vec::new();
            for n in [1, 5, 20] {
                let r = martingale_check(n, 1.0, 500_000, seed + n, MartingaleEstimator::default())?;
                pass &= r.passes;
                parts.push(format!("n={n} z={:+.2}", r.z));
            }
            Ok((pass, parts.join(" ")))
        }),
        check("petrov", || {
            let ch = ChannelParams::new(1.0)?;
            let n = 2000u64;
            let z = nested_log(2, n as f64)?.sqrt();
            let t = n as f64 * ch.capacity - z * (n as f64 * ch.dispersion).sqrt();
            let mc = tail_prob_mc(n, t, 1.0, 1_000_000, seed)?;
            let pt = petrov_tail(n, z, &a_moments(1.0)?.reflected())?;
            Ok(((pt / mc.value - 1.0).abs() <= 0.15, format!("petrov {pt:.5} mc {:.5}", mc.value)))
        }),
        check("bound_dominance", || {
            let d = design_vlsf_code(2000.0, 3, 0.05, 1.0)?.with_messages(1 << 10, true)?;
            let sim = simulate_code(&d, &SimConfig::new(10_000, seed))?;
            let inner = theorem3_eval(&d.inner_schedule()?, d.gamma, d.log_m, d.snr, &Theorem3Config::new(10_000, seed + 1, EvalMode::Joint))?;
            let b = lift_bound(inner, d.p_zero)?;
            let ok = sim.eps_hat.value <= b.eps_upper + 3.0 * sim.eps_hat.stderr.hypot(b.eps_stderr)
                && sim.tau_mean.value <= b.n_upper + 3.0 * sim.tau_mean.stderr.hypot(b.n_upper_stderr);
            Ok((ok, format!("eps {:.4}/{:.4} tau {:.1}/{:.1}", sim.eps_hat.value, b.eps_upper, sim.tau_mean.value, b.n_upper)))
        }),
        check("kkt_gap", || {
            let ch = ChannelParams::new(1.0)?;
            let gamma = 1e4 * ch.capacity - 3.0 * ch.ln_j();
            let r = kkt_refine(&solve_decoding_times(3, gamma, 1.0)?, gamma, 1.0)?;
            Ok((r.gap < 0.0 && (r.gap_ratio - 1.0).abs() <= 0.3, format!("ratio {:.3}", r.gap_ratio)))
        }),
        check("renewal", || {
            let ch = ChannelParams::new(1.0)?;
            let code = k_infinity_inner(1e4, &ch, 0.0)?;
            let s = simulate_renewal(code.ell, code.gamma, 1.0, 10_000, seed, None)?;
            let ok = s.tau_mean.value <= 1e4 + 3.0 * 1.96 * s.tau_mean.stderr
                && s.xi_mean.value <= s.lorden_bound + 3.0 * 1.96 * s.xi_mean.stderr;
            Ok((ok, format!("l*E[xi] {:.1}", s.tau_mean.value)))
        }),
        check("converse_ordering", || {
            let mut pass = true;
            for n in [1e3, 1e4, 1e5, 1e6] {
                let conv = converse_rate(n, 1e-3, 1.0)?;
                for regime in Regime::ALL.into_iter().filter(|r| r.is_achievability()) {
                    let ks: Vec<Option<u32>> = if regime == Regime::FiniteK { (2..=4).map(Some).collect() } else { vec![None] };
                    for k in ks {
                        if let Ok(p) = asymptotic_rate(&PointSpec { regime, k, n, eps: 1e-3, snr: 1.0 }) {
                            pass &= p.rate < conv;
                        }
                    }
                }
            }
            Ok((pass, String::new()))
        }),
    ]
}
