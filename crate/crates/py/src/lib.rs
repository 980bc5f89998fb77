//! Python bindings. Reports cross the boundary as plain dicts and lists built
//! from their JSON form; designs go back in the same shape.

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use vlsf_core::bounds::{self, PointSpec, Theorem3Config};
use vlsf_core::simulator::{self, Engine, MartingaleEstimator, SimConfig};
use vlsf_core::{schedule, ChannelParams, CodeDesign, Error, EvalMode, Regime};

create_exception!(vlsf, InfeasibleError, PyValueError);
create_exception!(vlsf, NonConvergenceError, PyRuntimeError);

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Infeasible(_) => InfeasibleError::new_err(e.to_string()),
        Error::NonConvergence { .. } => NonConvergenceError::new_err(e.to_string()),
        Error::Domain { .. } | Error::Validation(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(format!("malformed design: {e}")))
}

/// Capacity, dispersion, ln J(P) and the moments of the per-symbol information density.
#[pyfunction]
#[pyo3(signature = (snr=1.0))]
fn channel(py: Python<'_>, snr: f64) -> PyResult<Py<PyAny>> {
    let ch = ChannelParams::new(snr).map_err(py_err)?;
    to_py(py, &ch)
}

#[pyfunction]
fn nested_log(k: u32, n: f64) -> PyResult<f64> {
    vlsf_core::channel::nested_log(k, n).map_err(py_err)
}

/// Asymptotic rate expansion; `regime` is one of the names used in the CSV output.
#[pyfunction]
#[pyo3(signature = (regime, n, eps=1e-3, snr=1.0, k=None))]
fn asymptotic_rate(py: Python<'_>, regime: &str, n: f64, eps: f64, snr: f64, k: Option<u32>) -> PyResult<Py<PyAny>> {
    let regime: Regime = regime.parse().map_err(py_err)?;
    let point = bounds::asymptotic_rate(&PointSpec { regime, k, n, eps, snr }).map_err(py_err)?;
    to_py(py, &point)
}

#[pyfunction]
#[pyo3(signature = (n, eps=1e-3, snr=1.0))]
fn converse_rate(n: f64, eps: f64, snr: f64) -> PyResult<f64> {
    bounds::converse_rate(n, eps, snr).map_err(py_err)
}

/// Designs a code with `k` decoding times, or the unbounded-times code when `k` is None.
#[pyfunction]
#[pyo3(signature = (n, k=None, eps=1e-3, snr=1.0, messages=None, resolve_gamma=false))]
fn design(py: Python<'_>, n: f64, k: Option<u32>, eps: f64, snr: f64, messages: Option<u64>, resolve_gamma: bool) -> PyResult<Py<PyAny>> {
    let mut d = match k {
        Some(k) => schedule::design_vlsf_code(n, k, eps, snr),
        None => schedule::k_infinity_design(n, eps, snr, 0.0),
    }
    .map_err(py_err)?;
    if let Some(m) = messages {
        d = d.with_messages(m, resolve_gamma).map_err(py_err)?;
    }
    to_py(py, &d)
}

/// Random-coding bound on (ε, N) for a finite-times design.
#[pyfunction]
#[pyo3(signature = (design, trials=10_000, seed=1, joint=true))]
fn bound(py: Python<'_>, design: &Bound<'_, PyAny>, trials: u64, seed: u64, joint: bool) -> PyResult<Py<PyAny>> {
    let d: CodeDesign = from_py(py, design)?;
    let mode = if joint { EvalMode::Joint } else { EvalMode::Marginal };
    let lifted = py
        .detach(|| -> vlsf_core::Result<_> {
            let inner = bounds::theorem3_eval(&d.inner_schedule()?, d.gamma, d.log_m, d.snr, &Theorem3Config::new(trials, seed, mode))?;
            bounds::lift_bound(inner, d.p_zero)
        })
        .map_err(py_err)?;
    to_py(py, &lifted)
}

/// End-to-end simulation of a finite-times design.
#[pyfunction]
#[pyo3(signature = (design, trials=10_000, seed=1, explicit=false, fixed_codebook=false, j_slack=true))]
fn simulate(py: Python<'_>, design: &Bound<'_, PyAny>, trials: u64, seed: u64, explicit: bool, fixed_codebook: bool, j_slack: bool) -> PyResult<Py<PyAny>> {
    let d: CodeDesign = from_py(py, design)?;
    let mut cfg = SimConfig::new(trials, seed);
    cfg.engine = if explicit { Engine::Explicit } else { Engine::Ensemble };
    cfg.fixed_codebook = fixed_codebook;
    cfg.j_slack = j_slack;
    let stats = py.detach(|| simulator::simulate_code(&d, &cfg)).map_err(py_err)?;
    to_py(py, &stats)
}

/// Renewal simulation of the unbounded-times decoder on a grid of spacing `ell`.
#[pyfunction]
#[pyo3(signature = (ell, gamma, snr=1.0, trials=10_000, seed=1))]
fn renewal(py: Python<'_>, ell: u64, gamma: f64, snr: f64, trials: u64, seed: u64) -> PyResult<Py<PyAny>> {
    let stats = py.detach(|| simulator::simulate_renewal(ell, gamma, snr, trials, seed, None)).map_err(py_err)?;
    to_py(py, &stats)
}

/// First-order optimality refinement of a design's schedule.
#[pyfunction]
fn kkt_refine(py: Python<'_>, design: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
    let d: CodeDesign = from_py(py, design)?;
    let report = schedule::kkt_refine(&d.inner_schedule().map_err(py_err)?, d.gamma, d.snr).map_err(py_err)?;
    to_py(py, &report)
}

/// Importance-sampled check that the change-of-measure martingale has mean one.
#[pyfunction]
#[pyo3(signature = (n, snr=1.0, trials=100_000, seed=1))]
fn martingale_check(py: Python<'_>, n: u64, snr: f64, trials: u64, seed: u64) -> PyResult<Py<PyAny>> {
    let report = py
        .detach(|| simulator::martingale_check(n, snr, trials, seed, MartingaleEstimator::default()))
        .map_err(py_err)?;
    to_py(py, &report)
}

#[pymodule]
pub fn vlsf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", vlsf_core::TOOL_VERSION)?;
    m.add("InfeasibleError", m.py().get_type::<InfeasibleError>())?;
    m.add("NonConvergenceError", m.py().get_type::<NonConvergenceError>())?;
    m.add_function(wrap_pyfunction!(channel, m)?)?;
    m.add_function(wrap_pyfunction!(nested_log, m)?)?;
    m.add_function(wrap_pyfunction!(asymptotic_rate, m)?)?;
    m.add_function(wrap_pyfunction!(converse_rate, m)?)?;
    m.add_function(wrap_pyfunction!(design, m)?)?;
    m.add_function(wrap_pyfunction!(bound, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(renewal, m)?)?;
    m.add_function(wrap_pyfunction!(kkt_refine, m)?)?;
    m.add_function(wrap_pyfunction!(martingale_check, m)?)?;
    Ok(())
}
