use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use sfd_deom::bath::{decompose_bath, uniform_grid, validate_expansion, BrownianOscillatorBath, PoleScheme};
use sfd_deom::cli::{self, RunConfig, RunOptions, PRESETS};
use sfd_deom::ensemble::{ConvergenceReport, EnsembleResult};
use sfd_deom::Error;

create_exception!(_sfd_deom, SfdError, PyException);

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Config { .. } | Error::InvalidBath(_) | Error::InvalidInput(_) | Error::DegenerateDamping { .. } => {
            PyValueError::new_err(err.to_string())
        }
        other => SfdError::new_err(other.to_string()),
    }
}

/// TOML text of a built-in two-state case, ready to edit and pass to `run`.
#[pyfunction]
fn preset_config(name: &str) -> PyResult<String> {
    Ok(RunConfig::preset(name).map_err(to_py)?.to_toml_string())
}

/// Compares the pole expansion of a Brownian-oscillator bath with the
/// quadrature reference on `[0, t_max]`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (zeta=1.0, omega_b=1.0, beta=1.0, scheme="pade", n_poles=2, t_max=10.0, points=401))]
fn validate_bath<'py>(
    py: Python<'py>,
    zeta: f64,
    omega_b: f64,
    beta: f64,
    scheme: &str,
    n_poles: usize,
    t_max: f64,
    points: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let scheme: PoleScheme = scheme.parse().map_err(to_py)?;
    let report = py
        .detach(|| {
            let bath = BrownianOscillatorBath::new(zeta, omega_b, beta)?;
            let exp = decompose_bath(&bath, scheme, n_poles)?;
            validate_expansion(&exp, &bath, &uniform_grid(t_max, points))
        })
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("max_abs_error", report.max_abs_error)?;
    out.set_item("max_reversed_error", report.max_reversed_error)?;
    out.set_item("c0_abs", report.c0_abs)?;
    out.set_item("t", report.rows.iter().map(|r| r.t).collect::<Vec<_>>())?;
    out.set_item("abs_error", report.rows.iter().map(|r| r.abs_error).collect::<Vec<_>>())?;
    Ok(out)
}

fn summary<'py>(py: Python<'py>, result: &EnsembleResult, report: &ConvergenceReport) -> PyResult<Bound<'py, PyDict>> {
    let acc = &result.accumulator;
    let n = result.times.len();
    let means: Vec<_> = (0..n).map(|j| result.mean(j)).collect();
    let out = PyDict::new(py);
    out.set_item("t", result.times.clone())?;
    out.set_item("P", acc.populations().to_vec())?;
    out.set_item("sigma", (0..n).map(|j| acc.sigma(j).unwrap_or(f64::NAN)).collect::<Vec<_>>())?;
    out.set_item("rho00", means.iter().map(|m| m[(0, 0)].re).collect::<Vec<_>>())?;
    out.set_item("rho11", means.iter().map(|m| m[(1, 1)].re).collect::<Vec<_>>())?;
    out.set_item("accepted", acc.count())?;
    out.set_item("discarded", acc.discarded())?;
    out.set_item("field_std", acc.field_stats().transformed_std())?;
    out.set_item("raw_field_std", acc.field_stats().raw_std())?;
    out.set_item("wall_time", result.wall_time)?;
    let ladder = PyDict::new(py);
    for row in &report.rows {
        let entry = PyDict::new(py);
        entry.set_item("accepted", row.accepted)?;
        entry.set_item("P", row.p.clone())?;
        entry.set_item("sigma", row.sigma.clone())?;
        entry.set_item("phi", row.phi.clone())?;
        ladder.set_item(row.n, entry)?;
    }
    out.set_item("ladder", ladder)?;
    Ok(out)
}

/// Runs an ensemble from TOML text (see `preset_config`). With `out_dir`
/// the usual CSV and JSON files are written there as well.
#[pyfunction]
#[pyo3(signature = (config, out_dir=None))]
fn run<'py>(py: Python<'py>, config: &str, out_dir: Option<PathBuf>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = RunConfig::from_toml_str(config).map_err(to_py)?;
    if cfg.system_model().map_err(to_py)?.dim() < 2 {
        return Err(PyValueError::new_err("the summary needs at least two levels"));
    }
    let (result, report) = py
        .detach(|| match out_dir {
            Some(dir) => {
                let outcome = cli::run(
                    &cfg,
                    &RunOptions {
                        out_dir: dir,
                        validate_bath_only: false,
                    },
                )?;
                Ok(outcome.ensemble.expect("full runs produce an ensemble"))
            }
            None => cfg.simulate(),
        })
        .map_err(to_py)?;
    summary(py, &result, &report)
}

#[pymodule]
fn _sfd_deom(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PRESETS", PRESETS.to_vec())?;
    m.add("SfdError", m.py().get_type::<SfdError>())?;
    m.add_function(wrap_pyfunction!(preset_config, m)?)?;
    m.add_function(wrap_pyfunction!(validate_bath, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
