//! Python bindings: configs, simulations, seed sweeps and the beamforming
//! and ELM helpers.

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use ispw_core::beamforming::{self, CMat, C64};
use ispw_core::config::{Algorithm, ExperimentConfig};
use ispw_core::engine::{self, StepInfo};
use ispw_core::error::Error;
use ispw_core::{elm, metrics};

fn err(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::Config { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn algorithm(name: &str) -> PyResult<Algorithm> {
    name.parse().map_err(|e: Error| err(e))
}

fn real_matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn complex_matrix(rows: Vec<Vec<C64>>) -> PyResult<CMat> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(CMat::from_fn(r, c, |i, j| rows[i][j]))
}

fn rows_of<T: nalgebra::Scalar + Copy>(m: &DMatrix<T>) -> Vec<Vec<T>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn toml_value(v: &Bound<'_, PyAny>) -> PyResult<toml::Value> {
    if let Ok(b) = v.extract::<bool>() {
        Ok(toml::Value::Boolean(b))
    } else if let Ok(i) = v.extract::<i64>() {
        Ok(toml::Value::Integer(i))
    } else if let Ok(f) = v.extract::<f64>() {
        Ok(toml::Value::Float(f))
    } else if let Ok(s) = v.extract::<String>() {
        Ok(toml::Value::String(s))
    } else if let Ok(xs) = v.extract::<Vec<f64>>() {
        Ok(toml::Value::Array(xs.into_iter().map(toml::Value::Float).collect()))
    } else {
        Err(PyValueError::new_err(format!("unsupported config value {v}")))
    }
}

/// Experiment configuration. Keys are the TOML field names.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    /// Defaults for `algorithm` and `seed`, with keyword overrides.
    #[new]
    #[pyo3(signature = (algorithm, seed, **overrides))]
    fn new(algorithm: &str, seed: u64, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let base = PyConfig {
            inner: ExperimentConfig::with_defaults(self::algorithm(algorithm)?, seed),
        };
        match overrides {
            Some(o) => base.replace(o),
            None => Ok(base),
        }
    }

    #[staticmethod]
    fn from_toml(src: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: ExperimentConfig::from_toml_str(src).map_err(err)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    /// Copy with the given fields changed; `None` restores a field's default.
    #[pyo3(signature = (**changes))]
    fn with_changes(&self, changes: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        match changes {
            Some(c) => self.replace(c),
            None => Ok(self.clone()),
        }
    }

    #[getter]
    fn algorithm(&self) -> &'static str {
        self.inner.algorithm.name()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn __repr__(&self) -> String {
        format!("Config(algorithm={:?}, seed={})", self.inner.algorithm.name(), self.inner.seed)
    }
}

impl PyConfig {
    fn replace(&self, changes: &Bound<'_, PyDict>) -> PyResult<Self> {
        let mut table: toml::Table = self
            .inner
            .to_toml_string()
            .parse()
            .map_err(|e: toml::de::Error| PyRuntimeError::new_err(e.to_string()))?;
        for (k, v) in changes.iter() {
            let key: String = k.extract()?;
            if v.is_none() {
                table.remove(&key);
            } else {
                table.insert(key, toml_value(&v)?);
            }
        }
        Self::from_toml(&table.to_string())
    }
}

/// One metrics snapshot.
#[pyclass(name = "Record", frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyRecord {
    algorithm: String,
    seed: u64,
    simulated_time: f64,
    services_total: u64,
    comm_units: f64,
    nmse_test: f64,
    spectral_eff_mean: f64,
    spectral_eff_raw: f64,
}

#[pymethods]
impl PyRecord {
    fn __repr__(&self) -> String {
        format!(
            "Record({}, seed={}, t={}, services={}, nmse={:.4e})",
            self.algorithm, self.seed, self.simulated_time, self.services_total, self.nmse_test
        )
    }
}

impl From<&metrics::MetricRecord> for PyRecord {
    fn from(r: &metrics::MetricRecord) -> Self {
        PyRecord {
            algorithm: r.algorithm.clone(),
            seed: r.seed,
            simulated_time: r.simulated_time,
            services_total: r.services_total,
            comm_units: r.comm_units,
            nmse_test: r.nmse_test,
            spectral_eff_mean: r.spectral_eff_mean,
            spectral_eff_raw: r.spectral_eff_raw,
        }
    }
}

fn records(rs: &[metrics::MetricRecord]) -> Vec<PyRecord> {
    rs.iter().map(PyRecord::from).collect()
}

/// A running simulation that can be stepped, run and checkpointed.
#[pyclass(name = "Simulation")]
struct PySimulation {
    inner: engine::Simulation,
}

#[pymethods]
impl PySimulation {
    #[new]
    fn new(config: &PyConfig) -> PyResult<Self> {
        Ok(PySimulation {
            inner: engine::Simulation::new(&config.inner).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_checkpoint(data: &[u8]) -> PyResult<Self> {
        Ok(PySimulation {
            inner: engine::Simulation::from_checkpoint_bytes(data).map_err(err)?,
        })
    }

    fn checkpoint<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.checkpoint_bytes())
    }

    /// Processes one event and returns its kind: `"arrived"`, `"served"`,
    /// `"round"` or `"stopped"`.
    fn step(&mut self) -> PyResult<&'static str> {
        Ok(match self.inner.step().map_err(err)? {
            StepInfo::Arrived { .. } => "arrived",
            StepInfo::Served { .. } => "served",
            StepInfo::Round { .. } => "round",
            StepInfo::Stopped(_) => "stopped",
        })
    }

    /// Runs to the first stop criterion and returns its name.
    fn run(&mut self, py: Python<'_>) -> PyResult<&'static str> {
        let sim = &mut self.inner;
        let stop = py.detach(|| sim.run()).map_err(err)?;
        Ok(stop.name())
    }

    fn run_until_services(&mut self, services: u64) -> PyResult<Option<&'static str>> {
        Ok(self.inner.run_until_services(services).map_err(err)?.map(|s| s.name()))
    }

    #[getter]
    fn time(&self) -> f64 {
        self.inner.time()
    }

    #[getter]
    fn services(&self) -> u64 {
        self.inner.services()
    }

    #[getter]
    fn comm_units(&self) -> f64 {
        self.inner.comm_units()
    }

    #[getter]
    fn max_identity_gap(&self) -> f64 {
        self.inner.max_identity_gap()
    }

    #[getter]
    fn stop_reason(&self) -> Option<&'static str> {
        self.inner.stop_reason().map(|s| s.name())
    }

    fn records(&self) -> Vec<PyRecord> {
        records(self.inner.records())
    }

    fn metrics_csv(&self) -> String {
        metrics::metrics_to_string(self.inner.records())
    }

    /// Current global model as a list of rows.
    fn model(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows_of(&self.inner.model().map_err(err)?))
    }

    /// Centralized ridge solution of the same workload.
    fn oracle(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows_of(&self.inner.workload().oracle().map_err(err)?))
    }
}

/// Runs one config to completion; returns `(records, stop_reason)`.
#[pyfunction]
fn run_experiment(py: Python<'_>, config: &PyConfig) -> PyResult<(Vec<PyRecord>, &'static str)> {
    let out = py.detach(|| engine::run_experiment(&config.inner)).map_err(err)?;
    Ok((records(&out.records), out.stop.name()))
}

/// Runs every algorithm for every seed; returns records sorted by
/// algorithm, seed and time.
#[pyfunction]
fn compare(py: Python<'_>, config: &PyConfig, algorithms: Vec<String>, seeds: Vec<u64>) -> PyResult<Vec<PyRecord>> {
    let algs = algorithms.iter().map(|a| algorithm(a)).collect::<PyResult<Vec<_>>>()?;
    let (recs, _) = py.detach(|| engine::compare(&config.inner, &algs, &seeds)).map_err(err)?;
    Ok(records(&recs))
}

/// Top-`n_s` right singular vectors of `h`, as rows of complex numbers.
#[pyfunction]
fn optimal_fd_beamformer(h: Vec<Vec<C64>>, n_s: usize) -> PyResult<Vec<Vec<C64>>> {
    let f = beamforming::optimal_fd_beamformer(&complex_matrix(h)?, n_s).map_err(err)?;
    Ok(rows_of(&f))
}

#[pyfunction]
fn spectral_efficiency(h: Vec<Vec<C64>>, f: Vec<Vec<C64>>, rho_r: f64) -> PyResult<f64> {
    beamforming::spectral_efficiency(&complex_matrix(h)?, &complex_matrix(f)?, rho_r).map_err(err)
}

#[pyfunction]
fn sigmoid(v: f64) -> f64 {
    elm::sigmoid(v)
}

/// Solves `(WᵀW + N·λ·I) x = WᵀT` for stacked hidden matrix `w` and targets `t`.
#[pyfunction]
fn ridge_oracle(w: Vec<Vec<f64>>, t: Vec<Vec<f64>>, lambda_e: f64, n_agents: usize) -> PyResult<Vec<Vec<f64>>> {
    let x = elm::ridge_oracle(&real_matrix(w)?, &real_matrix(t)?, lambda_e, n_agents).map_err(err)?;
    Ok(rows_of(&x))
}

#[pymodule]
fn ispw(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyRecord>()?;
    m.add_class::<PySimulation>()?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_fd_beamformer, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_efficiency, m)?)?;
    m.add_function(wrap_pyfunction!(sigmoid, m)?)?;
    m.add_function(wrap_pyfunction!(ridge_oracle, m)?)?;
    m.add("ALGORITHMS", Algorithm::ALL.map(Algorithm::name).to_vec())?;
    Ok(())
}
