//! JSON and CSV writers. Every file starts with the run metadata: a `meta`
//! object in JSON, `#`-prefixed comment lines in CSV.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use vlsf_core::simulator::TraceRow;
use vlsf_core::{Error, Result};

use crate::args::Format;
use crate::commands::{BoundEntry, DesignEntry, Meta, SimEntry};

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn csv_preamble(w: &mut dyn Write, meta: &Meta) -> Result<()> {
    writeln!(w, "# tool: {} {}", meta.tool, meta.version)?;
    writeln!(w, "# seed: {}", meta.seed)?;
    writeln!(w, "# config: {}", serde_json::to_string(&meta.config)?)?;
    Ok(())
}

fn write_csv_rows<R: Serialize>(w: &mut dyn Write, rows: &[R]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    for r in rows {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes `entries` under `key` as JSON, or the flat `rows` as CSV.
pub fn emit<E: Serialize, R: Serialize>(path: Option<&Path>, format: Format, meta: &Meta, key: &str, entries: &[E], rows: &[R]) -> Result<()> {
    let mut w = sink(path)?;
    match format {
        Format::Json => {
            let mut doc = serde_json::Map::new();
            doc.insert("meta".into(), serde_json::to_value(meta)?);
            doc.insert(key.into(), serde_json::to_value(entries)?);
            serde_json::to_writer_pretty(&mut w, &doc)?;
            writeln!(w)?;
        }
        Format::Csv => {
            csv_preamble(&mut w, meta)?;
            write_csv_rows(&mut w, rows)?;
        }
    }
    w.flush().map_err(Error::from)
}

pub fn write_trace(path: &Path, meta: &Meta, rows: &[TraceRow]) -> Result<()> {
    let mut w = sink(Some(path))?;
    csv_preamble(&mut w, meta)?;
    #[derive(Serialize)]
    struct Row {
        trial: u64,
        #[serde(rename = "W")]
        message: u64,
        #[serde(rename = "D")]
        zero_decode: u8,
        tau: u64,
        decision: u64,
        error: u8,
    }
    let flat: Vec<Row> = rows
        .iter()
        .map(|r| Row {
            trial: r.trial,
            message: r.message,
            zero_decode: u8::from(r.zero_decode),
            tau: r.tau,
            decision: r.decision,
            error: u8::from(r.error),
        })
        .collect();
    write_csv_rows(&mut w, &flat)?;
    w.flush().map_err(Error::from)
}

fn join_times(times: &[u64]) -> String {
    times.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
}

#[derive(Serialize)]
pub struct OptimizeCsv {
    #[serde(rename = "N")]
    n: f64,
    #[serde(rename = "K")]
    k: String,
    status: String,
    gamma: Option<f64>,
    log_m: Option<f64>,
    p_zero: Option<f64>,
    eps_prime: Option<f64>,
    n_prime: Option<f64>,
    times: String,
    grid_spacing: Option<u64>,
    predicted_rate: Option<f64>,
    predicted_ratio: Option<f64>,
    design_rate: Option<f64>,
    kkt_gap: Option<f64>,
    dropped_terms: String,
    error: String,
}

impl From<&DesignEntry> for OptimizeCsv {
    fn from(e: &DesignEntry) -> Self {
        let d = e.design.as_ref();
        Self {
            n: e.n,
            k: e.k.to_string(),
            status: e.status.clone(),
            gamma: d.map(|d| d.gamma),
            log_m: d.map(|d| d.log_m),
            p_zero: d.map(|d| d.p_zero),
            eps_prime: d.map(|d| d.eps_prime),
            n_prime: d.map(|d| d.n_prime),
            times: d.map(|d| join_times(d.schedule.times())).unwrap_or_default(),
            grid_spacing: d.and_then(|d| d.grid_spacing),
            predicted_rate: e.predicted_rate,
            predicted_ratio: e.predicted_ratio,
            design_rate: d.map(|d| d.design_rate),
            kkt_gap: e.kkt.as_ref().map(|r| r.gap),
            dropped_terms: d.map(|d| d.dropped_terms.join(";")).unwrap_or_default(),
            error: e.error.clone().unwrap_or_default(),
        }
    }
}

#[derive(Serialize)]
pub struct BoundCsv {
    #[serde(rename = "N")]
    n: f64,
    #[serde(rename = "K")]
    k: String,
    status: String,
    eps_target: Option<f64>,
    eps_upper: Option<f64>,
    eps_stderr: Option<f64>,
    n_upper: Option<f64>,
    n_upper_stderr: Option<f64>,
    p_zero: Option<f64>,
    union_term_log: Option<f64>,
    trials: Option<u64>,
    lorden_n_upper: Option<f64>,
    error: String,
}

impl From<&BoundEntry> for BoundCsv {
    fn from(e: &BoundEntry) -> Self {
        let b = e.bound.as_ref();
        Self {
            n: e.n,
            k: e.k.clone(),
            status: e.status.clone(),
            eps_target: e.eps_target,
            eps_upper: b.map(|b| b.eps_upper),
            eps_stderr: b.map(|b| b.eps_stderr),
            n_upper: b.map(|b| b.n_upper),
            n_upper_stderr: b.map(|b| b.n_upper_stderr),
            p_zero: b.map(|b| b.p_zero),
            union_term_log: b.map(|b| b.inner.union_term_log),
            trials: b.map(|b| b.inner.trials).or(e.renewal.as_ref().map(|r| r.trials)),
            lorden_n_upper: e.lorden_n_upper,
            error: e.error.clone().unwrap_or_default(),
        }
    }
}

#[derive(Serialize)]
pub struct SimCsv {
    #[serde(rename = "N")]
    n: f64,
    #[serde(rename = "K")]
    k: String,
    status: String,
    trials: Option<u64>,
    errors: Option<u64>,
    eps_hat: Option<f64>,
    eps_stderr: Option<f64>,
    tau_mean: Option<f64>,
    tau_stderr: Option<f64>,
    zero_decodes: Option<u64>,
    forced: Option<u64>,
    xi_mean: Option<f64>,
    xi_stderr: Option<f64>,
    lorden_bound: Option<f64>,
    error: String,
}

impl From<&SimEntry> for SimCsv {
    fn from(e: &SimEntry) -> Self {
        let s = e.stats.as_ref();
        let r = e.renewal.as_ref();
        Self {
            n: e.n,
            k: e.k.clone(),
            status: e.status.clone(),
            trials: s.map(|s| s.trials).or(r.map(|r| r.trials)),
            errors: s.map(|s| s.errors),
            eps_hat: s.map(|s| s.eps_hat.value),
            eps_stderr: s.map(|s| s.eps_hat.stderr),
            tau_mean: s.map(|s| s.tau_mean.value).or(e.lifted_tau_mean),
            tau_stderr: s.map(|s| s.tau_mean.stderr).or(e.lifted_tau_stderr),
            zero_decodes: s.map(|s| s.zero_decodes),
            forced: s.map(|s| s.forced),
            xi_mean: r.map(|r| r.xi_mean.value),
            xi_stderr: r.map(|r| r.xi_mean.stderr),
            lorden_bound: r.map(|r| r.lorden_bound),
            error: e.error.clone().unwrap_or_default(),
        }
    }
}
