//! Python bindings: configuration, detector models, streaming inference,
//! single simulations, campaigns and their metrics.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use mds_core::campaign::{self, MetricsReport, RunResult};
use mds_core::config::RawConfig;
use mds_core::features::{Rows, Sample, FEATURES, ROWS};
use mds_core::lstm::{self, Observation, OnlineWindowState};
use mds_core::misbehavior::MisbehaviorSpec;
use mds_core::sim::{ForcedTrigger, Scenario, SimOutput};
use mds_core::{Error, MisbehaviorKind};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn rows_from(rows: Vec<Vec<f64>>) -> PyResult<Rows> {
    if rows.len() != ROWS || rows.iter().any(|r| r.len() != FEATURES) {
        return Err(PyValueError::new_err(format!(
            "expected {ROWS} rows of {FEATURES} features"
        )));
    }
    Ok(std::array::from_fn(|r| std::array::from_fn(|c| rows[r][c])))
}

/// Effective configuration: embedded defaults, an optional file, overrides.
#[pyclass(name = "Config", module = "platoon_mds", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    raw: RawConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (path=None, overrides=None))]
    fn new(path: Option<PathBuf>, overrides: Option<Vec<(String, String)>>) -> PyResult<Self> {
        let mut raw = match path {
            Some(p) => RawConfig::from_file(&p).map_err(py_err)?,
            None => RawConfig::default(),
        };
        for (k, v) in overrides.unwrap_or_default() {
            raw.set(&k, &v).map_err(py_err)?;
        }
        mds_core::config::Config::from_raw(&raw).map_err(py_err)?;
        Ok(PyConfig { raw })
    }

    fn get(&self, key: &str) -> Option<String> {
        self.raw.get(key).map(str::to_string)
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        let mut next = self.raw.clone();
        next.set(key, value).map_err(py_err)?;
        mds_core::config::Config::from_raw(&next).map_err(py_err)?;
        self.raw = next;
        Ok(())
    }

    fn dump(&self) -> String {
        self.raw.dump()
    }
}

impl PyConfig {
    fn typed(&self) -> PyResult<mds_core::config::Config> {
        mds_core::config::Config::from_raw(&self.raw).map_err(py_err)
    }
}

/// Trained detector plus its scaler.
#[pyclass(name = "Model", module = "platoon_mds", frozen)]
struct PyModel {
    inner: lstm::DetectorModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: lstm::load_model(&path).map_err(py_err)?,
        })
    }

    /// Untrained model with the given widths, mostly for tests.
    #[staticmethod]
    #[pyo3(signature = (hidden=32, dense=156, seed=0))]
    fn random(hidden: usize, dense: usize, seed: u64) -> Self {
        PyModel {
            inner: lstm::DetectorModel {
                params: lstm::LstmParams::init(hidden, dense, seed),
                scaler: mds_core::features::ScalerParams::identity(),
            },
        }
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        lstm::save_model(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.inner.hidden()
    }

    /// Label for one unscaled window of 4 delta rows.
    fn classify(&self, rows: Vec<Vec<f64>>) -> PyResult<u8> {
        let rows = rows_from(rows)?;
        Ok(self.inner.classify(&rows).map_err(py_err)?.value())
    }

    /// Class probabilities for one unscaled window.
    fn probabilities(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let rows = self.inner.scaler.transform(&rows_from(rows)?);
        Ok(self.inner.probabilities(&rows).map_err(py_err)?.to_vec())
    }
}

/// Jumping-window detector over one sender's beacon stream.
#[pyclass(name = "OnlineDetector", module = "platoon_mds")]
struct PyOnline {
    model: Py<PyModel>,
    state: OnlineWindowState,
}

#[pymethods]
impl PyOnline {
    #[new]
    fn new(model: Py<PyModel>) -> Self {
        PyOnline {
            model,
            state: OnlineWindowState::new(),
        }
    }

    /// Feeds one beacon; returns the label when it completes a window.
    fn observe(
        &mut self,
        send_time: f64,
        posx: f64,
        posy: f64,
        spdx: f64,
        spdy: f64,
        acl: f64,
    ) -> PyResult<Option<u8>> {
        let beacon = Sample {
            send_time,
            posx,
            posy,
            spdx,
            spdy,
            acl,
        };
        let obs = self
            .state
            .observe(beacon, &self.model.get().inner)
            .map_err(py_err)?;
        Ok(match obs {
            Observation::Prediction(l) => Some(l.value()),
            Observation::Pending | Observation::Discarded => None,
        })
    }

    #[getter]
    fn pending(&self) -> usize {
        self.state.count()
    }

    fn reset(&mut self) {
        self.state.clear();
    }
}

/// Outcome of one simulation.
#[pyclass(name = "SimResult", module = "platoon_mds", frozen)]
struct PySimResult {
    out: SimOutput,
}

#[pymethods]
impl PySimResult {
    #[getter]
    fn activation_time(&self) -> Option<u32> {
        self.out.activation_time
    }

    /// `(time, front, rear)` per collision.
    #[getter]
    fn collisions(&self) -> Vec<(f64, usize, usize)> {
        self.out
            .collisions
            .iter()
            .map(|c| (c.time, c.front, c.rear))
            .collect()
    }

    /// `(time, vehicle, from, to, cause)` per state change.
    #[getter]
    fn transitions(&self) -> Vec<(f64, usize, String, String, String)> {
        self.out
            .transitions
            .iter()
            .map(|e| {
                (
                    e.time,
                    e.vehicle,
                    e.from.to_string(),
                    e.to.to_string(),
                    format!("{:?}", e.cause).to_lowercase(),
                )
            })
            .collect()
    }

    /// `(time, vehicle, sender, label)` per classified window.
    #[getter]
    fn predictions(&self) -> Vec<(f64, usize, usize, u8)> {
        self.out
            .predictions
            .iter()
            .map(|p| (p.time, p.vehicle, p.sender, p.label.value()))
            .collect()
    }

    #[getter]
    fn command_range(&self) -> (f64, f64) {
        (self.out.min_command, self.out.max_command)
    }

    /// `(t, vehicle, x, v, a, front_distance)` rows when a trace was requested.
    #[getter]
    fn trace(&self) -> Vec<(f64, usize, f64, f64, f64, Option<f64>)> {
        self.out
            .trace
            .iter()
            .map(|r| (r.t, r.index, r.x, r.v, r.a, r.front_distance))
            .collect()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.out).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

fn parse_kind(kind: &str) -> PyResult<MisbehaviorKind> {
    kind.parse()
        .map_err(|e: Error| PyValueError::new_err(e.to_string()))
}

/// Runs one scenario. Seeds derive from `seed` exactly as the command line
/// `simulate` does.
#[pyfunction]
#[pyo3(signature = (
    size=4, seed=1, kind=None, attacker=1, activation=None, defense=false,
    model=None, force=None, trace_stride=None, config=None
))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    size: usize,
    seed: u64,
    kind: Option<&str>,
    attacker: usize,
    activation: Option<u32>,
    defense: bool,
    model: Option<Py<PyModel>>,
    force: Option<(usize, f64)>,
    trace_stride: Option<u32>,
    config: Option<PyConfig>,
) -> PyResult<PySimResult> {
    let cfg = config.unwrap_or(PyConfig::new(None, None)?).typed()?;
    let (drawn, sim_seed, injector_seed) = campaign::derive_seeds(seed, 0);
    let mut sc = Scenario::new(size, sim_seed);
    sc.params = cfg.sim;
    sc.defense = defense;
    sc.trace_stride = trace_stride;
    sc.forced_trigger = force.map(|(vehicle, time)| ForcedTrigger { vehicle, time });
    sc.misbehavior = kind
        .map(parse_kind)
        .transpose()?
        .map(|kind| MisbehaviorSpec {
            kind,
            vehicle: attacker,
            activation_time: activation.unwrap_or(drawn),
            seed: injector_seed,
            offset_redraw: cfg.offset_redraw,
        });
    let model = model.as_ref().map(|m| &m.get().inner);
    let out = py
        .detach(|| mds_core::sim::simulate(&sc, model))
        .map_err(py_err)?;
    Ok(PySimResult { out })
}

/// Campaign results, one JSON object per run.
#[pyclass(name = "Campaign", module = "platoon_mds", frozen)]
struct PyCampaign {
    results: Vec<RunResult>,
}

#[pymethods]
impl PyCampaign {
    #[staticmethod]
    #[pyo3(signature = (config=None, model=None))]
    fn run(py: Python<'_>, config: Option<PyConfig>, model: Option<Py<PyModel>>) -> PyResult<Self> {
        let cfg = config.unwrap_or(PyConfig::new(None, None)?).typed()?;
        let model = model.as_ref().map(|m| &m.get().inner);
        let results = py
            .detach(|| campaign::run_campaign(&cfg.campaign, model))
            .map_err(py_err)?;
        Ok(PyCampaign { results })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(PyCampaign {
            results: campaign::load_results(&dir).map_err(py_err)?,
        })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        campaign::save_results(&dir, &self.results).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.results.len()
    }

    fn runs_json(&self) -> PyResult<Vec<String>> {
        self.results
            .iter()
            .map(|r| serde_json::to_string(r).map_err(|e| PyValueError::new_err(e.to_string())))
            .collect()
    }

    /// Human-readable metrics report.
    fn report(&self) -> String {
        MetricsReport::build(&self.results).to_text()
    }

    /// `(mean, lo, hi, n)` single-label accuracy for one kind.
    fn accuracy(&self, kind: &str) -> PyResult<Option<(f64, f64, f64, usize)>> {
        let kind = parse_kind(kind)?;
        let report = MetricsReport::build(&self.results);
        Ok(report
            .accuracy_of(kind)
            .map(|r| (r.single.mean, r.single.lo, r.single.hi, r.single.n)))
    }

    /// `(misbehavior predictions, windows)` before activation.
    fn false_positives(&self) -> (usize, usize) {
        campaign::false_positive_report(&self.results)
    }

    fn accident_gain(&self) -> Option<f64> {
        campaign::accident_gain(&self.results)
    }
}

/// Names of the misbehavior kinds in label order, labels 1 to 8.
#[pyfunction]
fn kinds() -> Vec<&'static str> {
    MisbehaviorKind::ALL.iter().map(|k| k.name()).collect()
}

#[pyfunction]
fn label_of(kind: &str) -> PyResult<u8> {
    Ok(parse_kind(kind)?.label().value())
}

#[pymodule]
fn platoon_mds(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyOnline>()?;
    m.add_class::<PySimResult>()?;
    m.add_class::<PyCampaign>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(kinds, m)?)?;
    m.add_function(wrap_pyfunction!(label_of, m)?)?;
    Ok(())
}
