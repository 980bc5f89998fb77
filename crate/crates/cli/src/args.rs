use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Parser, ValueEnum};
use serde::{Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Rates,
    Bound,
    Optimize,
    Simulate,
    Table,
    Selftest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineArg {
    Ensemble,
    Explicit,
}

/// Number of decoding times: a positive integer or unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum KChoice {
    Finite(u32),
    Infinite,
}

impl FromStr for KChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t == "∞" {
            return Ok(KChoice::Infinite);
        }
        match t.parse::<u32>() {
            Ok(k) if k >= 1 => Ok(KChoice::Finite(k)),
            _ => Err(format!("'{t}' is neither a positive integer nor 'inf'")),
        }
    }
}

impl fmt::Display for KChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KChoice::Finite(k) => write!(f, "{k}"),
            KChoice::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for KChoice {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

pub type Grid = Vec<f64>;
pub type KSet = Vec<KChoice>;

/// Parses `a,b,c` or the log-spaced range `start:stop:count`.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let parse = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("bad number '{t}': {e}"));
    let values = if let [a, b, c] = s.split(':').collect::<Vec<_>>()[..] {
        let (a, b) = (parse(a)?, parse(b)?);
        let count: usize = c.trim().parse().map_err(|e| format!("bad count '{c}': {e}"))?;
        if !(a > 0.0 && b >= a) || count == 0 {
            return Err(format!("range '{s}' needs 0 < start ≤ stop and count ≥ 1"));
        }
        if count == 1 {
            vec![a]
        } else {
            let step = (b / a).ln() / (count - 1) as f64;
            (0..count)
                .map(|i| if i + 1 == count { b } else { (a.ln() + step * i as f64).exp().round() })
                .collect()
        }
    } else {
        s.split(',').map(parse).collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() || values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(format!("grid '{s}' must contain positive finite values"));
    }
    Ok(values)
}

pub fn parse_k_set(s: &str) -> Result<Vec<KChoice>, String> {
    let mut ks = s.split(',').map(KChoice::from_str).collect::<Result<Vec<_>, _>>()?;
    ks.sort();
    ks.dedup();
    Ok(ks)
}

#[derive(Debug, Parser)]
#[command(name = "vlsf", version, about = "Design, bounds and simulation of VLSF codes over the AWGN channel")]
pub struct Args {
    #[arg(long, value_enum)]
    pub command: Command,

    /// Signal-to-noise ratio P (linear). Defaults to 1, or to the design's P.
    #[arg(long)]
    pub snr: Option<f64>,

    /// Target average error probability.
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,

    /// Average decoding times: `a,b,c` or log-spaced `start:stop:count`.
    #[arg(long, value_parser = parse_grid)]
    pub n_grid: Option<Grid>,

    /// Numbers of decoding times, e.g. `1,2,3,4,inf`.
    #[arg(long, value_parser = parse_k_set)]
    pub k_set: Option<KSet>,

    #[arg(long, default_value_t = 10_000)]
    pub trials: u64,

    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Output format; csv for rates/table and json otherwise by default.
    #[arg(long, value_enum)]
    pub format: Option<Format>,

    /// Evaluate the decoding-time bound with joint tail events (default).
    #[arg(long, conflicts_with = "marginal")]
    pub joint: bool,

    /// Evaluate the decoding-time bound with marginal tail events.
    #[arg(long)]
    pub marginal: bool,

    /// Reuse one codebook across all simulated trials.
    #[arg(long)]
    pub fixed_codebook: bool,

    /// Design JSON (output of `--command optimize`, or one design) for bound/simulate.
    #[arg(long)]
    pub design: Option<PathBuf>,

    /// Cap the number of messages of every design at this value.
    #[arg(long)]
    pub messages: Option<u64>,

    /// With --messages, re-derive the threshold as ln M + ln N'.
    #[arg(long, requires = "messages")]
    pub resolve_gamma: bool,

    /// Drop the ln J(P) threshold slack in simulation and bounds.
    #[arg(long)]
    pub no_j_slack: bool,

    #[arg(long, value_enum, default_value_t = EngineArg::Ensemble)]
    pub engine: EngineArg,

    /// Per-trial trace CSV for simulate.
    #[arg(long)]
    pub trace: Option<PathBuf>,

    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_parse() {
        assert_eq!(parse_grid("1000,2e3").unwrap(), vec![1000.0, 2000.0]);
        assert_eq!(parse_grid("1e3:1e5:3").unwrap(), vec![1000.0, 10000.0, 100000.0]);
        assert!(parse_grid("0,5").is_err());
        assert!(parse_grid("1e3:1e2:3").is_err());
    }

    #[test]
    fn k_sets_parse() {
        assert_eq!(
            parse_k_set("inf,3,1,3").unwrap(),
            vec![KChoice::Finite(1), KChoice::Finite(3), KChoice::Infinite]
        );
        assert!(parse_k_set("0").is_err());
        assert!(parse_k_set("x").is_err());
    }
}
