//! Python extension module `algopilot_py`.
//!
//! Trajectories cross the boundary as their text form; structured results
//! (episode records, summaries, reports) come back as plain dicts and lists.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

use algopilot::agent::{self, AgentConfig, AgentError};
use algopilot::analysis;
use algopilot::env::{EnvConfig, EnvError, EnvState, SortEnv};
use algopilot::program_gen;
use algopilot::tlm::{self, TlmConfig, TlmError};
use algopilot::vocab::{self, Token};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn tlm_err(e: TlmError) -> PyErr {
    match e {
        TlmError::Io(e) => PyIOError::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn agent_err(e: AgentError) -> PyErr {
    match e {
        AgentError::Io(e) | AgentError::SinkFailure(e) => PyIOError::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_f64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (None, Some(f)) => f.into_pyobject(py)?.into_any(),
            _ => py.None().into_bound(py),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn serialized<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &serde_json::to_value(v).map_err(value_err)?)
}

/// A parsed trajectory.
#[pyclass(name = "Trajectory", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTrajectory {
    inner: vocab::Trajectory,
}

#[pymethods]
impl PyTrajectory {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        let inner = text.parse().map_err(value_err)?;
        Ok(PyTrajectory { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    fn tokens(&self) -> Vec<String> {
        self.inner.tokens().iter().map(Token::to_string).collect()
    }

    fn token_ids(&self) -> Vec<u8> {
        self.inner.tokens().iter().map(|t| t.id()).collect()
    }

    fn operations(&self) -> Vec<String> {
        self.inner.ops.iter().map(|o| o.to_string()).collect()
    }

    fn compares(&self) -> usize {
        self.inner.compares()
    }

    fn swaps(&self) -> usize {
        self.inner.swaps()
    }

    fn __len__(&self) -> usize {
        self.inner.ops.len()
    }

    fn __str__(&self) -> String {
        self.inner.serialize()
    }

    fn __repr__(&self) -> String {
        format!("Trajectory({:?})", self.inner.serialize())
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

fn trajectory_of(obj: &Bound<'_, PyAny>) -> PyResult<vocab::Trajectory> {
    if let Ok(t) = obj.cast::<PyTrajectory>() {
        return Ok(t.get().inner.clone());
    }
    let text: String = obj.extract()?;
    text.parse().map_err(value_err)
}

/// Count-based trajectory language model.
#[pyclass(name = "TlmModel", frozen)]
struct PyTlm {
    inner: tlm::TlmModel,
}

fn tlm_config(order: usize, alpha: f64, interpolation: &str) -> PyResult<TlmConfig> {
    let interpolation = match interpolation {
        "backoff" => tlm::Interpolation::Backoff,
        "linear" => tlm::Interpolation::Linear,
        other => return Err(value_err(format!("unknown interpolation {other}"))),
    };
    Ok(TlmConfig {
        order,
        smoothing_alpha: alpha,
        interpolation,
    })
}

#[pymethods]
impl PyTlm {
    /// Train on an iterable of trajectory strings or `Trajectory` objects.
    #[staticmethod]
    #[pyo3(signature = (corpus, order = 10, alpha = 0.1, interpolation = "backoff"))]
    fn train(corpus: &Bound<'_, PyAny>, order: usize, alpha: f64, interpolation: &str) -> PyResult<Self> {
        let mut inner = tlm::TlmModel::new(tlm_config(order, alpha, interpolation)?).map_err(tlm_err)?;
        for item in corpus.try_iter()? {
            inner.add_trajectory(&trajectory_of(&item?)?);
        }
        Ok(PyTlm { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyTlm {
            inner: tlm::TlmModel::load(path).map_err(tlm_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(tlm_err)
    }

    fn merge(&self, other: &PyTlm) -> PyResult<PyTlm> {
        Ok(PyTlm {
            inner: self.inner.merge(&other.inner).map_err(tlm_err)?,
        })
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.config().order
    }

    fn total_tokens(&self) -> u64 {
        self.inner.total_tokens()
    }

    fn num_contexts(&self) -> usize {
        self.inner.num_contexts()
    }

    /// Next-token probabilities indexed by vocabulary id. `prefix` is a list
    /// of token strings starting at the length marker; `<bos>` is implied.
    fn next_token_distribution(&self, prefix: Vec<String>) -> PyResult<Vec<f64>> {
        let tokens = prefix
            .iter()
            .map(|s| s.parse::<Token>().map_err(value_err))
            .collect::<PyResult<Vec<_>>>()?;
        Ok(self.inner.next_token_distribution(&tokens).to_vec())
    }

    #[pyo3(signature = (trajectory, agent_tokens_only = false))]
    fn sequence_loss(&self, trajectory: &Bound<'_, PyAny>, agent_tokens_only: bool) -> PyResult<f64> {
        Ok(self.inner.sequence_loss(&trajectory_of(trajectory)?, agent_tokens_only))
    }

    #[pyo3(signature = (corpus, agent_tokens_only = false))]
    fn corpus_loss(&self, corpus: &Bound<'_, PyAny>, agent_tokens_only: bool) -> PyResult<f64> {
        let ts = corpus
            .try_iter()?
            .map(|item| trajectory_of(&item?))
            .collect::<PyResult<Vec<_>>>()?;
        Ok(self.inner.corpus_loss(ts.iter(), agent_tokens_only))
    }
}

/// One sorting episode driven step by step.
#[pyclass(name = "SortEpisode")]
struct PyEpisode {
    state: EnvState,
}

fn env_err(e: EnvError) -> PyErr {
    value_err(e)
}

#[pymethods]
impl PyEpisode {
    /// Random episode of size `n` with default rewards and step cap.
    #[new]
    #[pyo3(signature = (n, seed = 0))]
    fn new(n: usize, seed: u64) -> PyResult<Self> {
        let env = SortEnv::new(EnvConfig::with_sizes(&[n])).map_err(env_err)?;
        Ok(PyEpisode {
            state: env.reset(n, seed).map_err(env_err)?,
        })
    }

    /// Returns `(outcome, short_reward, long_reward)`.
    fn compare(&mut self, i: usize, j: usize) -> PyResult<(String, f64, f64)> {
        let (o, r) = self.state.step_compare(i, j).map_err(env_err)?;
        Ok((o.as_str().to_string(), r.short, r.long))
    }

    /// Returns `(sorted, short_reward, long_reward)`.
    fn swap(&mut self) -> PyResult<(bool, f64, f64)> {
        let (sorted, r) = self.state.step_swap().map_err(env_err)?;
        Ok((sorted, r.short, r.long))
    }

    #[getter]
    fn n(&self) -> usize {
        self.state.n
    }

    #[getter]
    fn done(&self) -> bool {
        self.state.done
    }

    #[getter]
    fn steps_used(&self) -> usize {
        self.state.steps_used
    }

    fn is_sorted(&self) -> bool {
        self.state.is_sorted()
    }

    fn trajectory(&self) -> PyTrajectory {
        PyTrajectory {
            inner: self.state.trajectory.clone(),
        }
    }
}

/// Trained value network.
#[pyclass(name = "PolicyModel", frozen)]
struct PyPolicy {
    inner: agent::PolicyModel,
}

#[pymethods]
impl PyPolicy {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyPolicy {
            inner: agent::PolicyModel::load(path).map_err(agent_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(agent_err)
    }

    fn num_parameters(&self) -> usize {
        self.inner.num_parameters()
    }

    /// Greedy (or epsilon-greedy) rollouts; returns the evaluation summary.
    #[pyo3(signature = (sizes, episodes_per_size = 100, seed = 0, epsilon = 0.0))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        sizes: Vec<usize>,
        episodes_per_size: usize,
        seed: u64,
        epsilon: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let env = EnvConfig::with_sizes(&sizes);
        let s = agent::evaluate_model(&self.inner, &env, &sizes, episodes_per_size, seed, epsilon).map_err(agent_err)?;
        serialized(py, &s)
    }
}

/// Train a desk-scale agent; returns `(model, records)`.
#[pyfunction]
#[pyo3(signature = (episodes, sizes = vec![6], seed = 0, tlm = None, guided = false, guidance_coefficient = 0.02))]
fn train_agent<'py>(
    py: Python<'py>,
    episodes: u64,
    sizes: Vec<usize>,
    seed: u64,
    tlm: Option<&PyTlm>,
    guided: bool,
    guidance_coefficient: f64,
) -> PyResult<(PyPolicy, Bound<'py, PyAny>)> {
    let config = AgentConfig {
        episodes,
        seed,
        guidance_enabled: guided,
        guidance_coefficient,
        ..AgentConfig::desk()
    };
    let env = EnvConfig::with_sizes(&sizes);
    let mut records = Vec::new();
    let model = agent::train_with(&env, &config, tlm.map(|t| &t.inner), |r| {
        records.push(r.clone());
        Ok(())
    })
    .map_err(agent_err)?;
    Ok((PyPolicy { inner: model }, serialized(py, &records)?))
}

/// Random double-loop program trajectories as strings.
#[pyfunction]
#[pyo3(signature = (count, sizes = vec![6, 8, 10, 12, 14], seed = 0))]
fn generate_corpus(count: u64, sizes: Vec<usize>, seed: u64) -> PyResult<Vec<String>> {
    let ts = program_gen::generate_trajectories(count, &sizes, seed).map_err(value_err)?;
    Ok(ts.iter().map(|t| t.serialize()).collect())
}

#[pyfunction]
fn expected_quicksort_ops(py: Python<'_>, n: u64) -> PyResult<Bound<'_, PyAny>> {
    serialized(py, &analysis::expected_quicksort_ops(n))
}

#[pyfunction]
fn bubble_sort_reference(array: Vec<i64>) -> PyTrajectory {
    PyTrajectory {
        inner: analysis::bubble_sort_reference_trajectory(&array),
    }
}

#[pyfunction]
fn count_discrepancies<'py>(
    py: Python<'py>,
    model: &Bound<'py, PyAny>,
    reference: &Bound<'py, PyAny>,
) -> PyResult<Bound<'py, PyAny>> {
    let report = analysis::count_discrepancies(&trajectory_of(model)?, &trajectory_of(reference)?).map_err(value_err)?;
    serialized(py, &report)
}

#[pyfunction]
fn export_llm_prompt(trajectory: &Bound<'_, PyAny>) -> PyResult<String> {
    Ok(analysis::export_llm_prompt(&trajectory_of(trajectory)?))
}

#[pyfunction]
fn epsilon_at(episode: u64) -> f64 {
    agent::epsilon_at(&agent::EpsilonSchedule::default(), episode)
}

#[pyfunction]
fn vocabulary() -> Vec<String> {
    vocab::Vocabulary::standard().tokens().iter().map(Token::to_string).collect()
}

#[pymodule]
fn algopilot_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyTlm>()?;
    m.add_class::<PyEpisode>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(train_agent, m)?)?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(expected_quicksort_ops, m)?)?;
    m.add_function(wrap_pyfunction!(bubble_sort_reference, m)?)?;
    m.add_function(wrap_pyfunction!(count_discrepancies, m)?)?;
    m.add_function(wrap_pyfunction!(export_llm_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(epsilon_at, m)?)?;
    m.add_function(wrap_pyfunction!(vocabulary, m)?)?;
    Ok(())
}
