//! Python bindings. Configs and structured results cross the boundary as
//! JSON-compatible dicts; vectors cross as plain lists of floats.

use std::path::PathBuf;

use peghole::agents::{Policy, RandomPolicy, SacAgent, ScriptedController};
use peghole::env::{Action, Observation, PegInHoleEnv, OBS_DIM};
use peghole::procgen::export::{export_meshes, ModuleMetadata};
use peghole::procgen::AssemblyModule;
use peghole::vecenv::{self, EnvConfig, WorkerSet};
use peghole::Error;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn to_py_err(e: Error) -> PyErr {
    let msg = format!("{}: {e}", e.category());
    match e.category() {
        "io" => PyOSError::new_err(msg),
        "usage" | "config" | "format" | "geometry" | "generation" => PyValueError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned + Default>(py: Python<'_>, value: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    match value {
        None => Ok(T::default()),
        Some(v) => {
            let text: String = py.import("json")?.call_method1("dumps", (v,))?.extract()?;
            serde_json::from_str(&text).map_err(|e| PyValueError::new_err(format!("config: {e}")))
        }
    }
}

fn env_config(py: Python<'_>, value: Option<&Bound<'_, PyAny>>) -> PyResult<EnvConfig> {
    let config: EnvConfig = from_py(py, value)?;
    config.validate().map_err(to_py_err)?;
    Ok(config)
}

fn action(values: Vec<f64>) -> PyResult<Action> {
    values
        .try_into()
        .map_err(|v: Vec<f64>| PyValueError::new_err(format!("usage: action needs 6 entries, got {}", v.len())))
}

fn observation(values: Vec<f64>) -> PyResult<Observation> {
    let arr: [f64; OBS_DIM] = values
        .try_into()
        .map_err(|v: Vec<f64>| PyValueError::new_err(format!("usage: observation needs {OBS_DIM} entries, got {}", v.len())))?;
    Ok(Observation(arr))
}

fn make_policy(name: &str) -> PyResult<Box<dyn Policy>> {
    match name {
        "random" => Ok(Box::new(RandomPolicy)),
        "scripted" => Ok(Box::new(ScriptedController::default())),
        path => {
            let (agent, _) = SacAgent::load(&PathBuf::from(path)).map_err(to_py_err)?;
            Ok(Box::new(agent.policy(true)))
        }
    }
}

/// A generated peg and plate pair.
#[pyclass(name = "Module", module = "peghole_py", skip_from_py_object)]
#[derive(Clone)]
struct PyAssemblyModule {
    inner: AssemblyModule,
}

#[pymethods]
impl PyAssemblyModule {
    #[getter]
    fn params(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.params)
    }

    #[getter]
    fn hole_depth(&self) -> f64 {
        self.inner.hole_depth
    }

    fn digest(&self) -> String {
        ModuleMetadata::from_module(&self.inner).digest()
    }

    /// Writes peg.obj, plate.obj and module.json; returns the paths.
    fn export(&self, dir: PathBuf) -> PyResult<Vec<PathBuf>> {
        export_meshes(&self.inner, &dir).map_err(to_py_err)
    }

    fn __repr__(&self) -> String {
        let p = &self.inner.params;
        format!("Module(seed={}, vertices={}, clearance={})", p.seed, p.vertex_count, p.clearance)
    }
}

/// Module `index` of the stream rooted at `master_seed`.
#[pyfunction]
#[pyo3(signature = (master_seed, index=0, config=None))]
fn generate(py: Python<'_>, master_seed: u64, index: u64, config: Option<&Bound<'_, PyAny>>) -> PyResult<PyAssemblyModule> {
    let config = env_config(py, config)?;
    let inner = vecenv::generate_module(&config.generator, vecenv::module_seed(master_seed, index)).map_err(to_py_err)?;
    Ok(PyAssemblyModule { inner })
}

/// Single insertion episode on one module.
#[pyclass(name = "Env", module = "peghole_py")]
struct PyEnv {
    inner: PegInHoleEnv,
}

#[pymethods]
impl PyEnv {
    #[new]
    #[pyo3(signature = (module, seed=0, config=None))]
    fn new(py: Python<'_>, module: &PyAssemblyModule, seed: u64, config: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let config = env_config(py, config)?;
        let inner = PegInHoleEnv::new(module.inner.clone(), config.episode, config.physics, seed).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    #[pyo3(signature = (progress=1.0))]
    fn reset(&mut self, progress: f64) -> PyResult<Vec<f64>> {
        Ok(self.inner.reset(progress).map_err(to_py_err)?.0.to_vec())
    }

    /// Returns `(observation, reward, status, done)`.
    fn step(&mut self, a: Vec<f64>) -> PyResult<(Vec<f64>, f64, String, bool)> {
        let r = self.inner.step(&action(a)?).map_err(to_py_err)?;
        Ok((r.observation.0.to_vec(), r.reward, format!("{:?}", r.status), r.status.is_done()))
    }

    /// Peg position and row-major rotation in the world frame.
    fn peg_pose(&self) -> (Vec<f64>, Vec<f64>) {
        let pose = &self.inner.state().pose;
        let r = &pose.rotation;
        let rows = (0..3).flat_map(|i| (0..3).map(move |j| r[(i, j)])).collect();
        (pose.translation.iter().copied().collect(), rows)
    }

    #[getter]
    fn step_count(&self) -> usize {
        self.inner.step_count()
    }

    #[getter]
    fn status(&self) -> String {
        format!("{:?}", self.inner.status())
    }
}

/// Lock-step batch of workers with auto-reset.
#[pyclass(name = "VecEnv", module = "peghole_py")]
struct PyVecEnv {
    inner: WorkerSet,
}

#[pymethods]
impl PyVecEnv {
    #[new]
    #[pyo3(signature = (workers, master_seed=0, progress=1.0, config=None))]
    fn new(py: Python<'_>, workers: usize, master_seed: u64, progress: f64, config: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let config = env_config(py, config)?;
        let inner = vecenv::build_worker_set_range(&config, master_seed, 0, workers, 1, progress).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        self.inner.observations().iter().map(|o| o.0.to_vec()).collect()
    }

    /// Returns `(observations, rewards, statuses, reset_mask)`.
    fn step(&mut self, py: Python<'_>, actions: Vec<Vec<f64>>) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, Vec<String>, Vec<bool>)> {
        let actions = actions.into_iter().map(action).collect::<PyResult<Vec<_>>>()?;
        let b = py.detach(|| self.inner.batch_step(&actions)).map_err(to_py_err)?;
        Ok((
            b.observations.iter().map(|o| o.0.to_vec()).collect(),
            b.rewards,
            b.statuses.iter().map(|s| format!("{s:?}")).collect(),
            b.reset_mask,
        ))
    }
}

/// One action of the scripted controller for an observation.
#[pyfunction]
fn scripted_action(obs: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(ScriptedController::default().act(&observation(obs)?).to_vec())
}

/// Evaluates `policy` ("random", "scripted" or a checkpoint path) on
/// modules `first_index..first_index + modules` and returns the report.
#[pyfunction]
#[pyo3(signature = (policy, modules, attempts, master_seed=0, first_index=0, config=None))]
fn evaluate(
    py: Python<'_>,
    policy: &str,
    modules: usize,
    attempts: usize,
    master_seed: u64,
    first_index: u64,
    config: Option<&Bound<'_, PyAny>>,
) -> PyResult<Py<PyAny>> {
    let config = env_config(py, config)?;
    let policy = make_policy(policy)?;
    let report = py
        .detach(|| vecenv::evaluate_policy(&config, master_seed, first_index, modules, attempts, policy.as_ref(), 1.0))
        .map_err(to_py_err)?;
    let out = pyo3::types::PyDict::new(py);
    out.set_item("policy", &report.policy)?;
    out.set_item("episodes", report.episodes)?;
    out.set_item("success_rate", report.success_rate)?;
    out.set_item("completion_time_quartiles", report.completion_time_quartiles.map(|q| q.to_vec()))?;
    out.set_item("records", to_py(py, &report.records)?)?;
    Ok(out.into_any().unbind())
}

/// Default environment configuration as a dict.
#[pyfunction]
fn default_config(py: Python<'_>) -> PyResult<Py<PyAny>> {
    to_py(py, &EnvConfig::default())
}

#[pymodule]
fn peghole_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("OBS_DIM", OBS_DIM)?;
    m.add_class::<PyAssemblyModule>()?;
    m.add_class::<PyEnv>()?;
    m.add_class::<PyVecEnv>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(scripted_action, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    Ok(())
}
