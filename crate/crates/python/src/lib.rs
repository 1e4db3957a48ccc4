//! Python bindings: barrier and penalty evaluation, single solves of the
//! generated problem families, and the self-check suite.

use penbar_core::barrier::{Barrier, BarrierOps};
use penbar_core::check;
use penbar_core::cli::{build_instance, InstanceFlags, SolverFlags};
use penbar_core::outer::{self, OuterConfig};
use penbar_core::penalty::{Shape, SmoothPenalty};
use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde_json::{Map, Value};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_barrier(id: &str) -> PyResult<Barrier> {
    id.parse().map_err(value_error)
}

/// `(b(t), b'(t), b''(t))`; `inf` for `t >= 0`.
#[pyfunction]
fn barrier_eval(barrier: &str, t: f64) -> PyResult<(f64, f64, f64)> {
    let b = parse_barrier(barrier)?;
    Ok((b.value(t), b.derivative(t), b.second_derivative(t)))
}

/// `(b*(tau), b*'(tau))` of the convex conjugate.
#[pyfunction]
fn conjugate_eval(barrier: &str, tau: f64) -> PyResult<(f64, f64)> {
    let b = parse_barrier(barrier)?;
    Ok((b.conjugate(tau), b.conjugate_derivative(tau)))
}

/// Value and derivative of the row penalty for `lower <= t <= upper`.
/// Missing bounds are infinite; `split=True` penalizes both sides independently.
#[pyfunction]
#[pyo3(signature = (barrier, rho_star, t, lower=None, upper=None, split=false))]
fn penalty_eval(barrier: &str, rho_star: f64, t: f64, lower: Option<f64>, upper: Option<f64>, split: bool) -> PyResult<(f64, f64)> {
    let b = parse_barrier(barrier)?;
    let shape = match (lower, upper) {
        (None, Some(u)) => Shape::Upper(u),
        (Some(l), None) => Shape::Lower(l),
        (Some(l), Some(u)) if split => Shape::Split { l, u },
        (Some(l), Some(u)) => Shape::TwoSided { l, u },
        (None, None) => return Err(PyValueError::new_err("at least one of lower and upper is required")),
    };
    let p = SmoothPenalty::new(b, rho_star, shape).map_err(value_error)?;
    Ok((p.value(t), p.derivative(t)))
}

fn known_keys() -> Vec<String> {
    let mut keys = Vec::new();
    for v in [serde_json::to_value(SolverFlags::default()), serde_json::to_value(InstanceFlags::default())] {
        if let Ok(Value::Object(m)) = v {
            keys.extend(m.keys().cloned());
        }
    }
    keys.retain(|k| k != "out");
    keys.sort();
    keys
}

/// Solves one generated instance and returns its run record as a dict, with
/// an added `kkt_pass` entry from the independent re-verification.
///
/// Keyword arguments mirror the `solve` command-line flags with underscores,
/// e.g. `solve(family="degenerate", seed=3, eps_p=1e-7, barrier="inverse")`.
#[pyfunction]
#[pyo3(signature = (**options))]
fn solve<'py>(py: Python<'py>, options: Option<&Bound<'py, PyDict>>) -> PyResult<Bound<'py, PyAny>> {
    let json = py.import("json")?;
    let mut given = Map::new();
    if let Some(opts) = options {
        let text: String = json.call_method1("dumps", (opts,))?.extract()?;
        let parsed: Map<String, Value> = serde_json::from_str(&text).map_err(value_error)?;
        let known = known_keys();
        for (k, v) in parsed {
            let key = k.replace('_', "-");
            if !known.contains(&key) {
                return Err(PyKeyError::new_err(format!("unknown option `{k}`; expected one of {}", known.join(", ").replace('-', "_"))));
            }
            given.insert(key, v);
        }
    }
    let given = Value::Object(given);
    let solver: SolverFlags = serde_json::from_value(given.clone()).map_err(value_error)?;
    let inst_flags: InstanceFlags = serde_json::from_value(given).map_err(value_error)?;
    let inst = build_instance(&inst_flags).map_err(PyValueError::new_err)?;
    let cfg = solver.apply(&OuterConfig::default());
    let record = py
        .detach(|| -> Result<_, outer::OuterError> {
            let mut r = outer::run(&inst.problem, &inst.x0, &cfg)?;
            r.config.instance = inst.name.clone();
            let pass = r.converged() && outer::kkt_report(&r, &inst.problem)?.pass();
            Ok((r, pass))
        })
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let (record, kkt_pass) = record;
    let out = json.call_method1("loads", (record.to_json(),))?;
    out.set_item("kkt_pass", kkt_pass)?;
    Ok(out)
}

/// Runs the self-check suite; returns `(name, cases, failures)` per check.
#[pyfunction]
#[pyo3(signature = (seed=1))]
fn self_check(py: Python<'_>, seed: u64) -> Vec<(String, usize, usize)> {
    let report = py.detach(|| check::run_all(seed));
    report.checks.into_iter().map(|c| (c.name, c.cases, c.failures.len())).collect()
}

#[pymodule]
fn penbar_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(barrier_eval, m)?)?;
    m.add_function(wrap_pyfunction!(conjugate_eval, m)?)?;
    m.add_function(wrap_pyfunction!(penalty_eval, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(self_check, m)?)?;
    Ok(())
}
