//! Python bindings: configs, load series, training, forecasting, evaluation
//! and the gradient check.

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use gridcast::checkpoint::Checkpoint;
use gridcast::config::{RunConfig, KEYS};
use gridcast::data::{format_timestamp, parse_timestamp, LoadSeries};
use gridcast::eval::evaluate;
use gridcast::forecast::ForecastMode;
use gridcast::gradcheck::{check_s2s, check_stack, GradCheckOptions};
use gridcast::pipeline;
use gridcast::synthetic::{sine_daily_series, SyntheticSpec};
use gridcast::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Numerical(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_mode(mode: Option<&str>, ck: &Checkpoint) -> PyResult<ForecastMode> {
    match mode {
        Some(m) => m.parse().map_err(py_err),
        None => Ok(ck.model.default_mode()),
    }
}

/// Run configuration; keys match the `key = value` config file format.
#[pyclass(name = "Config", module = "gridcast", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    /// `Config(text=None, **overrides)`
    #[new]
    #[pyo3(signature = (text=None, **overrides))]
    fn new(text: Option<&str>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = match text {
            Some(t) => RunConfig::parse(t, "<python>").map_err(py_err)?,
            None => RunConfig::default(),
        };
        if let Some(kw) = overrides {
            for (k, v) in kw.iter() {
                let key: String = k.extract()?;
                let value = v.str()?.to_string();
                let value = match value.as_str() {
                    "True" => "true".to_string(),
                    "False" => "false".to_string(),
                    _ => value,
                };
                inner.set(&key, &value).map_err(|e| PyValueError::new_err(format!("{key}: {e}")))?;
            }
        }
        inner.validate().map_err(py_err)?;
        Ok(PyConfig { inner })
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        Ok(PyConfig { inner: RunConfig::from_file(path).map_err(py_err)? })
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner.get(key).ok_or_else(|| PyValueError::new_err(format!("unknown key '{key}'")))
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(|e| PyValueError::new_err(format!("{key}: {e}")))
    }

    #[staticmethod]
    fn keys() -> Vec<&'static str> {
        KEYS.to_vec()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!("Config(architecture={}, layers={}, units={})", self.inner.architecture, self.inner.layers, self.inner.units)
    }
}

/// Regular-grid load series in kW; missing steps are `None`.
#[pyclass(name = "Series", module = "gridcast", from_py_object)]
#[derive(Clone)]
struct PySeries {
    inner: LoadSeries,
}

#[pymethods]
impl PySeries {
    /// Loads a raw dataset file or canonical CSV, resampling as the config asks.
    #[staticmethod]
    #[pyo3(signature = (path, config=None))]
    fn load(path: &str, config: Option<&PyConfig>) -> PyResult<Self> {
        let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
        let (inner, _) = pipeline::load_series(&cfg, path).map_err(py_err)?;
        Ok(PySeries { inner })
    }

    /// Hourly daily-pattern series for smoke tests.
    #[staticmethod]
    #[pyo3(signature = (length=2016, seed=0, noise_std=0.01))]
    fn synthetic(length: usize, seed: u64, noise_std: f64) -> PyResult<Self> {
        let spec = SyntheticSpec { len: length, seed, noise_std, ..Default::default() };
        Ok(PySeries { inner: sine_daily_series(&spec).map_err(py_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.write_canonical_file(path).map_err(py_err)
    }

    #[getter]
    fn resolution(&self) -> &'static str {
        self.inner.resolution().as_str()
    }

    #[getter]
    fn start(&self) -> String {
        format_timestamp(self.inner.start())
    }

    #[getter]
    fn values(&self) -> Vec<Option<f64>> {
        self.inner.values().to_vec()
    }

    fn timestamps(&self) -> Vec<String> {
        (0..self.inner.len()).map(|i| format_timestamp(self.inner.timestamp(i))).collect()
    }

    fn valid_count(&self) -> usize {
        self.inner.valid_count()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Trained model together with the config it was trained under.
#[pyclass(name = "Model", module = "gridcast")]
struct PyModel {
    inner: Checkpoint,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyModel { inner: Checkpoint::load(path).map_err(py_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    #[getter]
    fn config(&self) -> PyConfig {
        PyConfig { inner: self.inner.config.clone() }
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    /// Forecast `horizon` steps starting at `start` (default: the first test
    /// step) from `window` steps of context.
    #[pyo3(signature = (series, start=None, window=None, horizon=None, mode=None))]
    fn forecast<'py>(
        &self,
        py: Python<'py>,
        series: &PySeries,
        start: Option<&str>,
        window: Option<usize>,
        horizon: Option<usize>,
        mode: Option<&str>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let from = start.map(parse_timestamp).transpose().map_err(py_err)?;
        let mode = parse_mode(mode, &self.inner)?;
        let cfg = &self.inner.config;
        let (f, actual) =
            pipeline::forecast_at(&self.inner, &series.inner, from, window.unwrap_or(cfg.window), horizon.unwrap_or(cfg.horizon), mode)
                .map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("mode", f.mode.as_str())?;
        d.set_item("timestamps", f.timestamps.iter().map(|t| format_timestamp(*t)).collect::<Vec<_>>())?;
        d.set_item("predictions", f.predictions)?;
        d.set_item("actual", actual)?;
        Ok(d)
    }

    /// Block-protocol RMSE on a series, as a dict of metrics.
    #[pyo3(signature = (series, mode=None, window=None, horizon=None))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        series: &PySeries,
        mode: Option<&str>,
        window: Option<usize>,
        horizon: Option<usize>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let mode = parse_mode(mode, &self.inner)?;
        let mut protocol = pipeline::protocol(&self.inner.config);
        protocol.window = window.unwrap_or(protocol.window);
        protocol.horizon = horizon.unwrap_or(protocol.horizon);
        let model = &self.inner.model;
        let series = &series.inner;
        let r = py.detach(|| evaluate(model, series, protocol, mode)).map_err(py_err)?;
        metrics_dict(py, &r.metrics_json())
    }
}

fn metrics_dict<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    if let Some(obj) = v.as_object() {
        for (k, v) in obj {
            match v {
                serde_json::Value::Number(n) if n.is_u64() => d.set_item(k, n.as_u64())?,
                serde_json::Value::Number(n) => d.set_item(k, n.as_f64())?,
                serde_json::Value::String(s) => d.set_item(k, s)?,
                serde_json::Value::Null => d.set_item(k, py.None())?,
                other => d.set_item(k, other.to_string())?,
            }
        }
    }
    Ok(d)
}

/// Fits normalisation on the training partition, trains, and returns the
/// model with its final test metrics.
#[pyfunction]
fn train<'py>(py: Python<'py>, config: &PyConfig, series: &PySeries) -> PyResult<(PyModel, Bound<'py, PyDict>)> {
    let cfg = &config.inner;
    let series = &series.inner;
    let out = py
        .detach(|| {
            let prepared = pipeline::prepare(cfg, series)?;
            pipeline::train(cfg, &prepared, &mut None, |_| {})
        })
        .map_err(py_err)?;
    let metrics = metrics_dict(py, &out.final_test.metrics_json())?;
    metrics.set_item("rmse_train_norm", out.final_train.rmse_norm)?;
    metrics.set_item("best_test_rmse_norm", out.best_test().map(|b| b.1))?;
    Ok((PyModel { inner: out.checkpoint }, metrics))
}

/// Finite-difference check of the BPTT gradients; returns the max relative
/// error per tensor and the overall verdict.
#[pyfunction]
#[pyo3(signature = (layers=2, units=4, steps=5, variant="standard", s2s=false, seed=7))]
fn gradcheck<'py>(py: Python<'py>, layers: usize, units: usize, steps: usize, variant: &str, s2s: bool, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let opts = GradCheckOptions { layers, units, steps, variant: variant.parse().map_err(py_err)?, seed, ..Default::default() };
    let report = if s2s { check_s2s(&opts) } else { check_stack(&opts) }.map_err(py_err)?;
    let d = PyDict::new(py);
    let per = PyDict::new(py);
    for t in &report.tensors {
        per.set_item(&t.name, t.max_rel_error)?;
    }
    d.set_item("tensors", per)?;
    d.set_item("max_rel_error", report.max_rel_error())?;
    d.set_item("passed", report.passed())?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "gridcast")]
fn gridcast_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PySeries>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
