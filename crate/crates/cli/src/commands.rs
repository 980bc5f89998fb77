use std::fs;

use serde::Serialize;
use serde_json::Value;
use vlsf_core::bounds::{asymptotic_rate, lift_bound, theorem3_eval, LiftedBound, PointSpec, Theorem3Config};
use vlsf_core::channel::{capacity, dispersion, nested_log, q_inverse, ChannelParams};
use vlsf_core::schedule::{design_vlsf_code, k_infinity_design, kkt_refine_real};
use vlsf_core::simulator::{simulate_code, simulate_renewal, Engine, SimConfig, TraceRow};
use vlsf_core::{CodeDesign, Error, EvalMode, KktReport, Regime, RenewalStats, Result, SimStats};

use crate::args::{Args, Command, EngineArg, Format, KChoice};

pub const DEFAULT_SNR: f64 = 1.0;

/// Configuration echoed into every output.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub snr: f64,
    pub eps: f64,
    pub n_grid: Vec<f64>,
    pub k_set: Vec<KChoice>,
    pub trials: u64,
    pub format: Format,
    pub mode: EvalMode,
    pub fixed_codebook: bool,
    pub design: Option<String>,
    pub messages: Option<u64>,
    pub resolve_gamma: bool,
    pub j_slack: bool,
    pub engine: EngineArg,
    pub trace: Option<String>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub config: RunConfig,
}

impl RunConfig {
    pub fn from_args(args: &Args) -> Self {
        let (grid, ks) = defaults(args.command);
        Self {
            command: args.command,
            snr: args.snr.unwrap_or(DEFAULT_SNR),
            eps: args.eps,
            n_grid: args.n_grid.clone().unwrap_or(grid),
            k_set: args.k_set.clone().unwrap_or(ks),
            trials: args.trials,
            format: args.format.unwrap_or(match args.command {
                Command::Rates | Command::Table => Format::Csv,
                _ => Format::Json,
            }),
            mode: if args.marginal { EvalMode::Marginal } else { EvalMode::Joint },
            fixed_codebook: args.fixed_codebook,
            design: args.design.as_ref().map(|p| p.display().to_string()),
            messages: args.messages,
            resolve_gamma: args.resolve_gamma,
            j_slack: !args.no_j_slack,
            engine: args.engine,
            trace: args.trace.as_ref().map(|p| p.display().to_string()),
            threads: args.threads,
        }
    }
}

fn defaults(command: Command) -> (Vec<f64>, Vec<KChoice>) {
    use KChoice::Finite;
    match command {
        Command::Rates => (
            (0..=30).map(|i| (10f64.powf(3.0 + 0.1 * f64::from(i))).round()).collect(),
            vec![Finite(1), Finite(2), Finite(3), Finite(4)],
        ),
        Command::Table => (vec![1e4], vec![Finite(2), Finite(3), Finite(4)]),
        _ => (vec![2000.0], vec![Finite(3)]),
    }
}

/// Short machine-readable tag for an error.
pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Infeasible(_) => "infeasible",
        Error::Domain { .. } => "domain",
        Error::Validation(_) | Error::ShapeMismatch(_) => "validation",
        Error::Resource(_) => "resource",
        Error::NonConvergence { .. } | Error::SystemNonConvergence { .. } => "nonconvergence",
        _ => "io",
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match error_kind(e) {
        "infeasible" => 2,
        "nonconvergence" => 4,
        _ => 3,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RateRow {
    #[serde(rename = "N")]
    pub n: f64,
    pub regime: &'static str,
    #[serde(rename = "K")]
    pub k: String,
    pub rate: Option<f64>,
    pub eps_capacity_ratio: Option<f64>,
    pub eps: f64,
    #[serde(rename = "P")]
    pub snr: f64,
    pub dropped_terms: String,
    pub status: String,
}

pub fn cmd_rates(cfg: &RunConfig) -> Vec<RateRow> {
    let mut rows = Vec::new();
    for &n in &cfg.n_grid {
        let mut specs: Vec<(Regime, Option<u32>, String)> = cfg
            .k_set
            .iter()
            .map(|k| match *k {
                KChoice::Finite(1) => (Regime::K1MaxPower, Some(1), k.to_string()),
                KChoice::Finite(k) => (Regime::FiniteK, Some(k), k.to_string()),
                KChoice::Infinite => (Regime::KInfMaxPower, None, k.to_string()),
            })
            .collect();
        specs.push((Regime::Converse, None, "any".into()));
        for (regime, k, label) in specs {
            let point = asymptotic_rate(&PointSpec {
                regime,
                k,
                n,
                eps: cfg.eps,
                snr: cfg.snr,
            });
            rows.push(match point {
                Ok(p) => RateRow {
                    n,
                    regime: regime.name(),
                    k: label,
                    rate: Some(p.rate),
                    eps_capacity_ratio: Some(p.eps_capacity_ratio),
                    eps: cfg.eps,
                    snr: cfg.snr,
                    dropped_terms: p.dropped_terms.join(";"),
                    status: "ok".into(),
                },
                Err(e) => RateRow {
                    n,
                    regime: regime.name(),
                    k: label,
                    rate: None,
                    eps_capacity_ratio: None,
                    eps: cfg.eps,
                    snr: cfg.snr,
                    dropped_terms: String::new(),
                    status: format!("{}: {e}", error_kind(&e)),
                },
            });
        }
    }
    rows
}

#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub scenario: &'static str,
    pub feedback: &'static str,
    pub power: &'static str,
    #[serde(rename = "K")]
    pub k: String,
    #[serde(rename = "N")]
    pub n: f64,
    pub eps: f64,
    #[serde(rename = "P")]
    pub snr: f64,
    pub first_order_expr: &'static str,
    pub first_order: f64,
    pub lower_expr: &'static str,
    pub lower_value: Option<f64>,
    pub upper_expr: &'static str,
    pub upper_value: Option<f64>,
    /// `(first_order + lower_value) / N`.
    pub rate_lower: Option<f64>,
    pub source: &'static str,
    pub dropped_terms: &'static str,
}

pub fn cmd_table(cfg: &RunConfig) -> Result<Vec<TableRow>> {
    let ch = ChannelParams::new(cfg.snr)?;
    let eps = cfg.eps;
    let (c, v) = (ch.capacity, ch.dispersion);
    let boosted = cfg.snr / (1.0 - eps);
    let (cb, vb) = (capacity(boosted)?, dispersion(boosted)?);
    let qinv = q_inverse(eps)?;
    let mut rows = Vec::new();
    for &n in &cfg.n_grid {
        let row = |scenario, feedback, power, k: String, first_expr, first: f64, lower_expr, lower: Option<f64>, upper_expr, upper: Option<f64>, source, dropped| TableRow {
            scenario,
            feedback,
            power,
            k,
            n,
            eps,
            snr: cfg.snr,
            first_order_expr: first_expr,
            first_order: first,
            lower_expr,
            lower_value: lower,
            upper_expr,
            upper_value: upper,
            rate_lower: lower.map(|l| (first + l) / n),
            source,
            dropped_terms: dropped,
        };
        let k1_second = -(n * v).sqrt() * qinv;
        let avg_second = (n * n.ln() * vb).sqrt();
        let vl_first = n * c / (1.0 - eps);
        rows.push(row("fixed-length", "none", "maximal", "1".into(), "N C(P)", n * c, "-sqrt(N V(P)) Qinv(eps)", Some(k1_second), "-sqrt(N V(P)) Qinv(eps)", Some(k1_second), "tan2015;polyanskiy2010", "O(ln N)"));
        rows.push(row("fixed-length", "none", "average", "1".into(), "N C(P/(1-eps))", n * cb, "-sqrt(N ln(N) V(P/(1-eps)))", Some(-avg_second), "-sqrt(N ln(N) V(P/(1-eps)))", Some(-avg_second), "yang2015", "O(sqrt(N))"));
        rows.push(row("fixed-length", "full", "maximal", "1".into(), "N C(P)", n * c, "-sqrt(N V(P)) Qinv(eps)", Some(k1_second), "-sqrt(N V(P)) Qinv(eps)", Some(k1_second), "tan2015;polyanskiy2010;fong2015", "O(ln N)"));
        rows.push(row("fixed-length", "full", "average", "1".into(), "N C(P/(1-eps))", n * cb, "-O(ln_(K)(N))", None, "+sqrt(N ln(N) V(P/(1-eps)))", Some(avg_second), "truong2017", "O(ln_(K)(N))"));
        for k in cfg.k_set.iter().filter_map(|k| match k {
            KChoice::Finite(k) if *k >= 2 => Some(*k),
            _ => None,
        }) {
            let lower = nested_log(k - 1, n)
                .ok()
                .filter(|l| *l >= 0.0)
                .map(|l| -(n * l * v / (1.0 - eps)).sqrt());
            for power in ["maximal", "average"] {
                rows.push(row("variable-length", "stop", power, k.to_string(), "N C(P)/(1-eps)", vl_first, "-sqrt(N ln_(K-1)(N) V(P)/(1-eps))", lower, "+O(1)", None, "vlsf-finite-k;truong2016", "O(sqrt(N/ln_(K-1)(N)))"));
            }
        }
        let kinf = -(n * 4.0 * c * ch.ln_j() / (1.0 - eps)).sqrt();
        rows.push(row("variable-length", "stop", "maximal", "inf".into(), "N C(P)/(1-eps)", vl_first, "-sqrt(N 4 C(P) ln J(P)/(1-eps))", Some(kinf), "+O(1)", None, "vlsf-k-inf;truong2016", "O(ln N)"));
        rows.push(row("variable-length", "stop", "average", "inf".into(), "N C(P)/(1-eps)", vl_first, "-ln N", Some(-n.ln()), "+O(1)", None, "truong2016", "O(1)"));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignEntry {
    pub n: f64,
    pub k: KChoice,
    pub status: String,
    pub error: Option<String>,
    pub predicted_rate: Option<f64>,
    pub predicted_ratio: Option<f64>,
    pub design: Option<CodeDesign>,
    pub kkt: Option<KktReport>,
}

fn predicted(n: f64, k: KChoice, cfg: &RunConfig) -> Option<(f64, f64)> {
    let (regime, kk) = match k {
        KChoice::Finite(1) => (Regime::K1MaxPower, Some(1)),
        KChoice::Finite(k) => (Regime::FiniteK, Some(k)),
        KChoice::Infinite => (Regime::KInfMaxPower, None),
    };
    asymptotic_rate(&PointSpec {
        regime,
        k: kk,
        n,
        eps: cfg.eps,
        snr: cfg.snr,
    })
    .ok()
    .map(|p| (p.rate, p.eps_capacity_ratio))
}

fn build_design(n: f64, k: KChoice, cfg: &RunConfig) -> Result<CodeDesign> {
    let d = match k {
        KChoice::Finite(k) => design_vlsf_code(n, k, cfg.eps, cfg.snr)?,
        KChoice::Infinite => k_infinity_design(n, cfg.eps, cfg.snr, 0.0)?,
    };
    match cfg.messages {
        Some(m) if d.grid_spacing.is_none() => d.with_messages(m, cfg.resolve_gamma),
        _ => Ok(d),
    }
}

pub fn cmd_optimize(cfg: &RunConfig) -> Vec<DesignEntry> {
    let mut out = Vec::new();
    for &n in &cfg.n_grid {
        for &k in &cfg.k_set {
            let pred = predicted(n, k, cfg);
            let mut entry = DesignEntry {
                n,
                k,
                status: "ok".into(),
                error: None,
                predicted_rate: pred.map(|p| p.0),
                predicted_ratio: pred.map(|p| p.1),
                design: None,
                kkt: None,
            };
            match build_design(n, k, cfg) {
                Ok(d) => {
                    if d.real_times.len() >= 2 {
                        match kkt_refine_real(&d.real_times, d.gamma, &ChannelParams::new(d.snr).expect("validated")) {
                            Ok(r) => entry.kkt = Some(r),
                            Err(e) => log::warn!("refinement failed for N={n} K={k}: {e}"),
                        }
                    }
                    entry.design = Some(d);
                }
                Err(e) => {
                    entry.status = error_kind(&e).into();
                    entry.error = Some(e.to_string());
                }
            }
            out.push(entry);
        }
    }
    out
}

/// A design to evaluate, or the reason there is none.
pub struct DesignSource {
    pub n: f64,
    pub k: String,
    pub design: std::result::Result<CodeDesign, (String, String)>,
}

fn k_label(d: &CodeDesign) -> String {
    d.k.map_or_else(|| "inf".to_string(), |k| k.to_string())
}

/// Designs from `--design` or, failing that, from the grid.
pub fn load_designs(args: &Args, cfg: &RunConfig) -> Result<Vec<DesignSource>> {
    let Some(path) = &args.design else {
        let mut out = Vec::new();
        for &n in &cfg.n_grid {
            for &k in &cfg.k_set {
                out.push(DesignSource {
                    n,
                    k: k.to_string(),
                    design: build_design(n, k, cfg).map_err(|e| (error_kind(&e).to_string(), e.to_string())),
                });
            }
        }
        return Ok(out);
    };
    let value: Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    let mut designs = Vec::new();
    match value.get("designs") {
        Some(Value::Array(entries)) => {
            for e in entries {
                let n = e.get("n").and_then(Value::as_f64).unwrap_or(f64::NAN);
                let k = e.get("k").and_then(Value::as_str).unwrap_or("?").to_string();
                let design = match e.get("design") {
                    Some(d) if !d.is_null() => Ok(serde_json::from_value::<CodeDesign>(d.clone())?),
                    _ => Err((
                        e.get("status").and_then(Value::as_str).unwrap_or("missing").to_string(),
                        e.get("error").and_then(Value::as_str).unwrap_or("no design in entry").to_string(),
                    )),
                };
                designs.push(DesignSource { n, k, design });
            }
        }
        _ => {
            let d: CodeDesign = serde_json::from_value(value)?;
            designs.push(DesignSource {
                n: d.n_target,
                k: k_label(&d),
                design: Ok(d),
            });
        }
    }
    for src in &mut designs {
        if let Ok(d) = &mut src.design {
            if let Some(p) = args.snr {
                if p != d.snr {
                    return Err(Error::Validation(format!(
                        "--snr {p} does not match the design's P = {} (N = {}, K = {})",
                        d.snr, src.n, src.k
                    )));
                }
            }
            if let Some(m) = cfg.messages {
                if d.grid_spacing.is_none() {
                    *d = d.with_messages(m, cfg.resolve_gamma)?;
                }
            }
        }
    }
    Ok(designs)
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundEntry {
    pub n: f64,
    pub k: String,
    pub status: String,
    pub error: Option<String>,
    pub eps_target: Option<f64>,
    pub bound: Option<LiftedBound>,
    /// Unbounded-times designs: `(1 − p)·ℓ·lorden_bound`.
    pub lorden_n_upper: Option<f64>,
    pub renewal: Option<RenewalStats>,
}

pub fn cmd_bound(designs: &[DesignSource], cfg: &RunConfig, seed: u64) -> Vec<BoundEntry> {
    designs
        .iter()
        .map(|src| {
            let mut entry = BoundEntry {
                n: src.n,
                k: src.k.clone(),
                status: "ok".into(),
                error: None,
                eps_target: None,
                bound: None,
                lorden_n_upper: None,
                renewal: None,
            };
            let res = match &src.design {
                Err((kind, msg)) => Err((kind.clone(), msg.clone())),
                Ok(d) => {
                    entry.eps_target = Some(d.eps_target);
                    let mut run = || -> Result<()> {
                        if let Some(ell) = d.grid_spacing {
                            let r = simulate_renewal(ell, d.gamma, d.snr, cfg.trials, seed, cfg.threads)?;
                            entry.lorden_n_upper = Some((1.0 - d.p_zero) * ell as f64 * r.lorden_bound);
                            entry.renewal = Some(r);
                        } else {
                            entry.bound = Some(bound_for(d, cfg, seed)?);
                        }
                        Ok(())
                    };
                    run().map_err(|e| (error_kind(&e).to_string(), e.to_string()))
                }
            };
            match res {
                Ok(()) => {}
                Err((kind, msg)) => {
                    entry.status = kind;
                    entry.error = Some(msg);
                }
            }
            entry
        })
        .collect()
}

fn bound_for(d: &CodeDesign, cfg: &RunConfig, seed: u64) -> Result<LiftedBound> {
    let mut t3 = Theorem3Config::new(cfg.trials, seed, cfg.mode);
    t3.j_slack = cfg.j_slack;
    t3.threads = cfg.threads;
    let inner = theorem3_eval(&d.inner_schedule()?, d.gamma, d.log_m, d.snr, &t3)?;
    lift_bound(inner, d.p_zero)
}

#[derive(Debug, Clone, Serialize)]
pub struct SimEntry {
    pub n: f64,
    pub k: String,
    pub status: String,
    pub error: Option<String>,
    pub stats: Option<SimStats>,
    pub renewal: Option<RenewalStats>,
    /// Unbounded-times designs: `(1 − p)·ℓ·E[ξ]` and its standard error.
    pub lifted_tau_mean: Option<f64>,
    pub lifted_tau_stderr: Option<f64>,
}

pub fn cmd_simulate(designs: &[DesignSource], cfg: &RunConfig, seed: u64, trace: &mut Vec<TraceRow>) -> Vec<SimEntry> {
    designs
        .iter()
        .map(|src| {
            let mut entry = SimEntry {
                n: src.n,
                k: src.k.clone(),
                status: "ok".into(),
                error: None,
                stats: None,
                renewal: None,
                lifted_tau_mean: None,
                lifted_tau_stderr: None,
            };
            let res: std::result::Result<(), (String, String)> = match &src.design {
                Err((kind, msg)) => Err((kind.clone(), msg.clone())),
                Ok(d) => {
                    let mut run = || -> Result<()> {
                        if let Some(ell) = d.grid_spacing {
                            let r = simulate_renewal(ell, d.gamma, d.snr, cfg.trials, seed, cfg.threads)?;
                            entry.lifted_tau_mean = Some((1.0 - d.p_zero) * r.tau_mean.value);
                            entry.lifted_tau_stderr = Some((1.0 - d.p_zero) * r.tau_mean.stderr);
                            entry.renewal = Some(r);
                        } else {
                            let mut sc = SimConfig::new(cfg.trials, seed);
                            sc.fixed_codebook = cfg.fixed_codebook;
                            sc.j_slack = cfg.j_slack;
                            sc.threads = cfg.threads;
                            sc.record_trace = cfg.trace.is_some();
                            sc.engine = match cfg.engine {
                                EngineArg::Ensemble => Engine::Ensemble,
                                EngineArg::Explicit => Engine::Explicit,
                            };
                            let mut stats = simulate_code(d, &sc)?;
                            if let Some(rows) = stats.trace.take() {
                                trace.extend(rows);
                            }
                            entry.stats = Some(stats);
                        }
                        Ok(())
                    };
                    run().map_err(|e| (error_kind(&e).to_string(), e.to_string()))
                }
            };
            if let Err((kind, msg)) = res {
                entry.status = kind;
                entry.error = Some(msg);
            }
            entry
        })
        .collect()
}

/// Rewrites the grid, K set, ε and P of `cfg` to describe the loaded designs.
pub fn adopt_designs(cfg: &mut RunConfig, designs: &[DesignSource]) {
    let mut ns: Vec<f64> = designs.iter().map(|d| d.n).collect();
    ns.dedup();
    let mut ks: Vec<KChoice> = designs.iter().filter_map(|d| d.k.parse().ok()).collect();
    ks.sort();
    ks.dedup();
    cfg.n_grid = ns;
    cfg.k_set = ks;
    let ok: Vec<&CodeDesign> = designs.iter().filter_map(|d| d.design.as_ref().ok()).collect();
    if let Some(first) = ok.first() {
        if ok.iter().all(|d| d.eps_target == first.eps_target) {
            cfg.eps = first.eps_target;
        }
        cfg.snr = first.snr;
    }
}
