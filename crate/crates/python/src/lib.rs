//! Python bindings: run the offline pipeline and query a reduced model.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ::smagrb::certification::ErrorBound;
use ::smagrb::config::RunConfig;
use ::smagrb::pipeline::{self, Artifacts, OnlineModel};
use ::smagrb::rb_online::reconstruct;
use ::smagrb::Error;

create_exception!(smagrb, ConfigError, PyValueError, "Invalid configuration or missing input.");
create_exception!(smagrb, NumericalError, PyRuntimeError, "Failure of a numerical method.");

fn to_py(e: Error) -> PyErr {
    if e.is_numerical() {
        NumericalError::new_err(e.to_string())
    } else {
        ConfigError::new_err(e.to_string())
    }
}

fn bound_dict<'py>(py: Python<'py>, b: &ErrorBound) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("residual", b.eps)?;
    d.set_item("beta", b.beta)?;
    d.set_item("tau", b.tau)?;
    d.set_item("bound", b.delta)?;
    d.set_item("certified", b.is_certified())?;
    Ok(d)
}

/// Runs (or resumes) the offline stages; returns the summary as a dict.
#[pyfunction]
fn offline<'py>(py: Python<'py>, config: PathBuf, out: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let cfg = RunConfig::load(&config).map_err(to_py)?;
    let base = config.parent().map(PathBuf::from).unwrap_or_default();
    let s = py.detach(|| pipeline::run_offline(&cfg, &base, &out)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("triangles", s.n_elements)?;
    d.set_item("velocity_dofs", s.velocity_dofs)?;
    d.set_item("pressure_dofs", s.pressure_dofs)?;
    d.set_item("eim_terms", s.eim_terms)?;
    d.set_item("rb_size", s.rb_size)?;
    d.set_item("converged", s.greedy_converged)?;
    d.set_item("rho", s.rho)?;
    d.set_item("sobolev_constant", s.c_t)?;
    d.set_item("greedy_indicators", s.greedy_history.iter().map(|g| g.indicator).collect::<Vec<_>>())?;
    Ok(d)
}

/// Reduced model loaded from an offline output directory.
#[pyclass(module = "smagrb", unsendable)]
struct ReducedModel {
    model: OnlineModel,
}

#[pymethods]
impl ReducedModel {
    #[new]
    fn new(out: PathBuf) -> PyResult<Self> {
        let art = Artifacts::new(out);
        art.require_offline().map_err(to_py)?;
        Ok(ReducedModel {
            model: OnlineModel::open(&art).map_err(to_py)?,
        })
    }

    /// Reduced basis size.
    #[getter]
    fn n(&self) -> usize {
        self.model.rb.n()
    }

    #[getter]
    fn n_eim(&self) -> usize {
        self.model.eim.len()
    }

    #[getter]
    fn mu_range(&self) -> (f64, f64) {
        let [lo, hi] = self.model.problem.config.problem.mu_range;
        (lo, hi)
    }

    /// Parameters at which snapshots entered the basis.
    #[getter]
    fn selected(&self) -> Vec<f64> {
        self.model.rb.mus.clone()
    }

    /// Reduced coordinates `(velocity, pressure)` at `mu`.
    fn coefficients(&self, mu: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let sol = self
            .model
            .operators
            .solve(mu, &self.model.problem.config.online_solver())
            .map_err(to_py)?;
        Ok((sol.u, sol.p))
    }

    /// Finite-element velocity (without the lift) and pressure of the reduced solution.
    fn solve(&self, mu: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let sol = self
            .model
            .operators
            .solve(mu, &self.model.problem.config.online_solver())
            .map_err(to_py)?;
        Ok(reconstruct(&self.model.rb, &sol))
    }

    /// Error bound at `mu`: keys residual, beta, tau, bound (None when tau > 1), certified.
    fn bound<'py>(&self, py: Python<'py>, mu: f64) -> PyResult<Bound<'py, PyDict>> {
        let (_, b) = self.model.solve_certified(mu).map_err(to_py)?;
        bound_dict(py, &b)
    }

    /// Truth solution `(velocity, pressure)` at `mu`.
    fn truth(&self, py: Python<'_>, mu: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let s = py.detach(|| self.model.problem.truth.solve(mu)).map_err(to_py)?;
        Ok((s.u, s.p))
    }

    /// Benchmark rows as dicts with the report columns.
    fn benchmark<'py>(&self, py: Python<'py>, mus: Vec<f64>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.model
            .benchmark(&mus)
            .into_iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("mu", r.mu)?;
                d.set_item("t_fe_s", r.t_fe_s)?;
                d.set_item("t_online_s", r.t_online_s)?;
                d.set_item("speedup", r.speedup)?;
                d.set_item("err_u_T", r.err_u_t)?;
                d.set_item("err_p_L2", r.err_p_l2)?;
                d.set_item("out_of_range", r.out_of_range)?;
                d.set_item("error", r.error)?;
                Ok(d)
            })
            .collect()
    }
}

#[pymodule]
fn smagrb(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_function(wrap_pyfunction!(offline, m)?)?;
    m.add_class::<ReducedModel>()?;
    Ok(())
}
