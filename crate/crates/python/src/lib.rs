//! Python bindings: the synthetic generator, core metrics, the experiment
//! grid and checkpoint inference.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use nskt::data::{self, Interaction, SynthSpec};
use nskt::error::NsktError;
use nskt::experiment::{self, ExperimentConfig};
use nskt::explain::{self, Target};
use nskt::metrics;
use nskt::model::Model;

fn message(e: &NsktError) -> String {
    format!("{}: {e}", e.kind())
}

fn py_err(e: NsktError) -> PyErr {
    PyValueError::new_err(message(&e))
}

fn to_sequence(items: &[(u32, u32, bool)]) -> Vec<Interaction> {
    items
        .iter()
        .enumerate()
        .map(|(t, &(skill, quiz, correct))| Interaction {
            student: 0,
            t: t as u32,
            skill,
            quiz,
            correct,
        })
        .collect()
}

/// Tukey upper fence of sequence lengths.
#[pyfunction]
fn tukey_fence(lengths: Vec<usize>) -> PyResult<usize> {
    data::tukey_fence(&lengths).map_err(py_err)
}

#[pyfunction]
fn auc(probs: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    metrics::auc_scores(&probs, &labels).map_err(py_err)
}

/// Synthetic students as lists of `(skill, quiz, correct)`.
#[pyfunction]
#[pyo3(signature = (n_students=200, n_skills=13, n_quizzes=100, max_len=100, seed=7))]
fn synthesize(n_students: usize, n_skills: usize, n_quizzes: usize, max_len: usize, seed: u64) -> PyResult<Vec<Vec<(u32, u32, bool)>>> {
    let ds = data::synthesize(&SynthSpec {
        n_students,
        n_skills,
        n_quizzes,
        max_len,
        seed,
    })
    .map_err(py_err)?;
    Ok(ds
        .students
        .iter()
        .map(|s| s.iter().map(|i| (i.skill, i.quiz, i.correct)).collect())
        .collect())
}

#[pyfunction]
fn default_config() -> String {
    serde_json::to_string_pretty(&ExperimentConfig::default()).expect("configuration serialises")
}

/// Runs the grid described by a JSON config and returns the CSV table.
#[pyfunction]
fn run_grid(py: Python<'_>, config: &str) -> PyResult<String> {
    let cfg: ExperimentConfig = serde_json::from_str(config).map_err(|e| py_err(e.into()))?;
    cfg.validate().map_err(py_err)?;
    py.detach(|| {
        let prepared = experiment::load_data(&cfg)?;
        let rows = experiment::run_grid(&cfg, &prepared);
        let mut out = Vec::new();
        experiment::write_grid_csv(&rows, &cfg.stamp(), &mut out)?;
        Ok(String::from_utf8(out).expect("csv is utf-8"))
    })
    .map_err(py_err)
}

/// A trained checkpoint.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: Model,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<PyModel> {
        let (inner, _) = Model::load(&path).map_err(py_err)?;
        Ok(PyModel { inner })
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind().to_string()
    }

    /// Probability of a correct response at steps `1..n`.
    fn predict(&self, sequence: Vec<(u32, u32, bool)>) -> PyResult<Vec<f64>> {
        self.inner.predict_sequence(&to_sequence(&sequence)).map_err(py_err)
    }

    /// Local attribution for the prediction at `step`, as JSON.
    #[pyo3(signature = (sequence, step, target="loss"))]
    fn attribution(&self, sequence: Vec<(u32, u32, bool)>, step: u32, target: &str) -> PyResult<String> {
        let target: Target = target.parse().map_err(py_err)?;
        let a = explain::local_attribution(&self.inner, &to_sequence(&sequence), step, target).map_err(py_err)?;
        serde_json::to_string(&a).map_err(|e| py_err(e.into()))
    }
}

#[pymodule]
fn nskt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tukey_fence, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_grid, m)?)?;
    m.add_class::<PyModel>()?;
    Ok(())
}
