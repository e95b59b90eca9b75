//! Python bindings: scenario generation, time integration, reduced models
//! and trajectory comparison.

use std::path::PathBuf;

use contactrom::cli::{compare_files, exit_code};
use contactrom::mor;
use contactrom::scenario::{self, CrackParams, Mode, WheelRailParams};
use contactrom::sim::{self, offline};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;

create_exception!(contactrom, ContactRomError, PyException);
create_exception!(contactrom, SolverError, ContactRomError);

fn err(e: contactrom::Error) -> PyErr {
    // solver failures map to the same split as the CLI's exit codes
    if exit_code(&e) == 1 {
        SolverError::new_err(e.to_string())
    } else {
        ContactRomError::new_err(e.to_string())
    }
}

fn parse_mode(s: &str) -> PyResult<Mode> {
    [Mode::Full, Mode::ReducedCb, Mode::ReducedPlainKrylov]
        .into_iter()
        .find(|m| m.as_str() == s)
        .ok_or_else(|| PyValueError::new_err(format!("unknown mode {s:?}, expected full, rom-cb or rom-plain")))
}

#[pyclass(name = "Scenario", module = "contactrom", frozen)]
struct PyScenario {
    inner: scenario::Scenario,
}

#[pymethods]
impl PyScenario {
    /// Torn square of `n x n` cells.
    #[staticmethod]
    #[pyo3(signature = (n=40, crack_cells=None, h=0.05, t_end=20.0, mode="full", krylov=3))]
    fn crack(
        n: usize,
        crack_cells: Option<usize>,
        h: f64,
        t_end: f64,
        mode: &str,
        krylov: usize,
    ) -> PyResult<Self> {
        let mut p = CrackParams::square(n);
        if let Some(c) = crack_cells {
            p.crack_cells = c;
        }
        p.h = h;
        p.t_end = t_end;
        p.mode = parse_mode(mode)?;
        p.krylov = krylov;
        let inner = scenario::crack_scenario(&p).map_err(err)?;
        Ok(PyScenario { inner })
    }

    /// Wheel on rail, units N/mm/s.
    #[staticmethod]
    #[pyo3(signature = (h=2.5e-3, t_end=0.5, mode="full", krylov=3, rail_nx=24, rail_ny=6, wheel_nt=40, wheel_nr=6))]
    #[allow(clippy::too_many_arguments)]
    fn wheelrail(
        h: f64,
        t_end: f64,
        mode: &str,
        krylov: usize,
        rail_nx: usize,
        rail_ny: usize,
        wheel_nt: usize,
        wheel_nr: usize,
    ) -> PyResult<Self> {
        let p = WheelRailParams {
            rail_nx,
            rail_ny,
            wheel_nt,
            wheel_nr,
            h,
            t_end,
            mode: parse_mode(mode)?,
            krylov,
            ..WheelRailParams::default()
        };
        let inner = scenario::wheelrail_scenario(&p).map_err(err)?;
        Ok(PyScenario { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = scenario::Scenario::load(&path).map_err(err)?;
        Ok(PyScenario { inner })
    }

    /// Writes `<stem>.toml` and its mesh into `dir`, returns the TOML path.
    fn save(&self, dir: PathBuf, stem: &str) -> PyResult<PathBuf> {
        self.inner.save(dir, stem).map_err(err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.config.reduction.mode.as_str()
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.mesh.coords.len()
    }

    #[getter]
    fn n_elements(&self) -> usize {
        self.inner.mesh.elements.len()
    }

    /// Integrates the scenario; `mode` overrides the configured one.
    #[pyo3(signature = (mode=None))]
    fn run(&self, py: Python<'_>, mode: Option<&str>) -> PyResult<PyTrajectory> {
        let mode = match mode {
            Some(m) => parse_mode(m)?,
            None => self.inner.config.reduction.mode,
        };
        let inner = py.detach(|| sim::run(&self.inner, mode)).map_err(err)?;
        Ok(PyTrajectory { inner })
    }

    /// Builds the reduced model for the initial pairing.
    #[pyo3(signature = (mode="rom-cb"))]
    fn reduce(&self, py: Python<'_>, mode: &str) -> PyResult<PyReducedModel> {
        let mode = parse_mode(mode)?;
        if mode == Mode::Full {
            return Err(PyValueError::new_err("reduce needs a reduced mode"));
        }
        let off = py.detach(|| offline(&self.inner, mode)).map_err(err)?;
        Ok(PyReducedModel {
            inner: off.reduced.expect("reduced mode builds a model"),
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name={:?}, nodes={}, mode={})",
            self.inner.name(),
            self.inner.mesh.coords.len(),
            self.inner.config.reduction.mode
        )
    }
}

#[pyclass(name = "Trajectory", module = "contactrom", frozen)]
struct PyTrajectory {
    inner: sim::Trajectory,
}

impl PyTrajectory {
    fn step(&self, i: usize) -> PyResult<&sim::StepRecord> {
        self.inner
            .steps
            .get(i)
            .ok_or_else(|| PyIndexError::new_err(format!("step {i} out of range")))
    }
}

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.mode.as_str()
    }

    #[getter]
    fn n_full(&self) -> usize {
        self.inner.n_full
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn n_master(&self) -> usize {
        self.inner.n_master
    }

    #[getter]
    fn n_krylov(&self) -> usize {
        self.inner.n_krylov
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m
    }

    #[getter]
    fn sensors(&self) -> Vec<usize> {
        self.inner.sensors.clone()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.steps.iter().map(|s| s.t).collect()
    }

    #[getter]
    fn iterations(&self) -> Vec<usize> {
        self.inner.steps.iter().map(|s| s.iterations).collect()
    }

    #[getter]
    fn pairing_versions(&self) -> Vec<usize> {
        self.inner.steps.iter().map(|s| s.pairing_version).collect()
    }

    #[getter]
    fn all_certified(&self) -> bool {
        self.inner.all_certified()
    }

    #[getter]
    fn offline_seconds(&self) -> f64 {
        self.inner.offline_seconds
    }

    #[getter]
    fn online_seconds(&self) -> f64 {
        self.inner.online_seconds()
    }

    fn __len__(&self) -> usize {
        self.inner.steps.len()
    }

    /// Free-DOF displacement at step `i` (expanded for reduced runs).
    fn displacement(&self, i: usize) -> PyResult<Vec<f64>> {
        Ok(self.step(i)?.q.clone())
    }

    fn multipliers(&self, i: usize) -> PyResult<Vec<f64>> {
        Ok(self.step(i)?.lambda.clone())
    }

    fn gaps(&self, i: usize) -> PyResult<Vec<f64>> {
        Ok(self.step(i)?.gap.clone())
    }

    /// `(ux, uy)` of sensor `sensor` at step `i`.
    fn sensor_displacement(&self, i: usize, sensor: usize) -> PyResult<(f64, f64)> {
        self.step(i)?;
        if sensor >= self.inner.sensors.len() {
            return Err(PyIndexError::new_err(format!("sensor {sensor} out of range")));
        }
        let [x, y] = self.inner.sensor_displacement(i, sensor);
        Ok((x, y))
    }

    /// `(gap, pressure)` pairs at the contact sensor, or None.
    fn contact_trace(&self) -> Option<Vec<(f64, f64)>> {
        self.inner.contact_trace()
    }

    /// von Mises stress at the contact sensor per step.
    fn von_mises(&self) -> Vec<Option<f64>> {
        self.inner.steps.iter().map(|s| s.von_mises).collect()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_csv(path).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Trajectory(name={:?}, mode={}, n={}, steps={})",
            self.inner.name,
            self.inner.mode,
            self.inner.n,
            self.inner.steps.len()
        )
    }
}

#[pyclass(name = "ReducedModel", module = "contactrom", frozen)]
struct PyReducedModel {
    inner: mor::ReducedModel,
}

#[pymethods]
impl PyReducedModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = mor::ReducedModel::load(path).map_err(err)?;
        Ok(PyReducedModel { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn n_full(&self) -> usize {
        self.inner.n_full()
    }

    #[getter]
    fn n_master(&self) -> usize {
        self.inner.n_master()
    }

    #[getter]
    fn n_krylov(&self) -> usize {
        self.inner.n_krylov
    }

    /// Column `j` of the basis, length `n_full`.
    fn basis_column(&self, j: usize) -> PyResult<Vec<f64>> {
        if j >= self.inner.n() {
            return Err(PyIndexError::new_err(format!("column {j} out of range")));
        }
        Ok(self.inner.q.column(j).iter().copied().collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "ReducedModel(n={}, n_full={}, n_master={}, n_krylov={})",
            self.inner.n(),
            self.inner.n_full(),
            self.inner.n_master(),
            self.inner.n_krylov
        )
    }
}

/// Error report between a reference trajectory CSV and another one, as a dict.
#[pyfunction]
fn compare(py: Python<'_>, a: PathBuf, b: PathBuf) -> PyResult<Py<PyAny>> {
    let report = py.detach(|| compare_files(&a, &b)).map_err(err)?;
    let text = serde_json::to_string(&report).map_err(|e| ContactRomError::new_err(e.to_string()))?;
    let json = PyModule::import(py, "json")?;
    Ok(json.call_method1("loads", (text,))?.unbind())
}

#[pymodule]
#[pyo3(name = "contactrom")]
fn contactrom_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyReducedModel>()?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add("ContactRomError", m.py().get_type::<ContactRomError>())?;
    m.add("SolverError", m.py().get_type::<SolverError>())?;
    Ok(())
}
