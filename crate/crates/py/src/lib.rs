//! Python bindings: metrics, the toy corpus, partitioning, aggregation,
//! run configuration and experiments, and checkpoint inference.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fedpit_core::corpus::{self, Dataset, Example, PartitionSpec};
use fedpit_core::evaljudge::{respond, EvalConfig};
use fedpit_core::fedcore;
use fedpit_core::metrics;
use fedpit_core::runner::{self, RunConfig};
use fedpit_core::tinylm::{self, Checkpoint, LanguageModel};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn example_dict<'py>(py: Python<'py>, e: &Example) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("instruction", &e.instruction)?;
    d.set_item("output", &e.response)?;
    d.set_item("category", &e.category)?;
    Ok(d)
}

fn dataset_dicts<'py>(py: Python<'py>, data: &Dataset) -> PyResult<Vec<Bound<'py, PyDict>>> {
    data.examples.iter().map(|e| example_dict(py, e)).collect()
}

fn dataset_from(records: Vec<(String, String, String)>) -> Dataset {
    let examples = records.into_iter().map(|(i, o, c)| Example::new(i, o, c)).collect();
    Dataset::new("python", examples)
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    metrics::tokenize(text)
}

#[pyfunction]
fn lcs_length(a: Vec<String>, b: Vec<String>) -> usize {
    metrics::lcs_length(&a, &b)
}

/// Balanced-F1 Rouge-L over tokenized texts.
#[pyfunction]
fn rouge_l(candidate: &str, reference: &str) -> f64 {
    metrics::rouge_l(&metrics::tokenize(candidate), &metrics::tokenize(reference))
}

#[pyfunction]
#[pyo3(signature = (candidate, reference, max_n = 4, smoothing = true))]
fn bleu(candidate: &str, reference: &str, max_n: usize, smoothing: bool) -> PyResult<f64> {
    if max_n == 0 {
        return Err(err("max_n must be at least 1"));
    }
    let s = if smoothing { metrics::Smoothing::AddOne } else { metrics::Smoothing::None };
    Ok(metrics::bleu_with(&metrics::tokenize(candidate), &metrics::tokenize(reference), max_n, s))
}

#[pyfunction]
fn distinct_n(texts: Vec<String>, n: usize) -> PyResult<f64> {
    if n == 0 {
        return Err(err("n must be at least 1"));
    }
    let toks: Vec<Vec<String>> = texts.iter().map(|t| metrics::tokenize(t)).collect();
    Ok(metrics::distinct_n(&toks, n))
}

/// Templated toy tasks as a list of `{instruction, output, category}`.
#[pyfunction]
fn toy_corpus(py: Python<'_>, num_categories: usize, per_category: usize, seed: u64) -> PyResult<Vec<Bound<'_, PyDict>>> {
    if num_categories < 2 || per_category < 10 {
        return Err(err("need at least 2 categories and 10 examples per category"));
    }
    dataset_dicts(py, &corpus::generate_toy_corpus(num_categories, per_category, seed))
}

/// Dirichlet non-IID split of `(instruction, output, category)` records.
#[pyfunction]
fn partition(
    py: Python<'_>,
    records: Vec<(String, String, String)>,
    alpha: f64,
    num_clients: usize,
    seed: u64,
) -> PyResult<Vec<Vec<Bound<'_, PyDict>>>> {
    let data = dataset_from(records);
    let spec = PartitionSpec { alpha, num_clients, seed };
    let shards = corpus::dirichlet_partition(&data, &spec).map_err(err)?;
    shards.iter().map(|s| dataset_dicts(py, s)).collect()
}

/// Weighted FedAvg of `(vector, weight)` pairs.
#[pyfunction]
fn aggregate(updates: Vec<(Vec<f64>, f64)>) -> PyResult<Vec<f64>> {
    fedcore::aggregate(&updates).map_err(err)
}

/// A validated run configuration.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        PyConfig { inner: RunConfig::default() }
    }

    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        Ok(PyConfig { inner: runner::preset(name).map_err(err)? })
    }

    #[staticmethod]
    fn presets() -> Vec<&'static str> {
        runner::PRESETS.to_vec()
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: RunConfig = serde_json::from_str(text).map_err(err)?;
        inner.validate().map_err(err)?;
        Ok(PyConfig { inner })
    }

    /// Returns a copy with `key=value` applied, e.g. `set("fed.rounds", "5")`.
    fn set(&self, key: &str, value: &str) -> PyResult<Self> {
        let inner = self.inner.with_overrides(&[format!("{key}={value}")]).map_err(err)?;
        Ok(PyConfig { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.inner).expect("serializable")
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(seed={}, algorithms={:?}, output_dir={:?})",
            self.inner.seed, self.inner.algorithms, self.inner.output_dir
        )
    }
}

/// Runs every configured algorithm and returns one summary dict per variant.
#[pyfunction]
fn run<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = config.inner.clone();
    let res = py.detach(move || runner::run_experiment(&cfg)).map_err(err)?;
    res.variants
        .iter()
        .map(|v| {
            let s = &v.summary;
            let d = PyDict::new(py);
            d.set_item("variant", &s.variant)?;
            d.set_item("final_score", s.final_score)?;
            d.set_item("wins", s.wins)?;
            d.set_item("ties", s.ties)?;
            d.set_item("losses", s.losses)?;
            d.set_item("final_attack_bleu", s.final_attack_bleu)?;
            d.set_item("final_attack_rouge_l", s.final_attack_rouge_l)?;
            d.set_item("per_round_score", v.per_round.iter().map(|m| m.eval_score).collect::<Vec<_>>())?;
            Ok(d)
        })
        .collect()
}

/// Markdown comparison table for finished run directories.
#[pyfunction]
fn report(dirs: Vec<PathBuf>) -> PyResult<String> {
    runner::report(&dirs).map_err(err)
}

/// Backbone plus optional adapter loaded from a checkpoint file.
#[pyclass(name = "Model")]
struct PyModel {
    ckpt: Checkpoint,
    adapter: tinylm::AdapterParams,
}

#[pymethods]
impl PyModel {
    /// Loads a checkpoint; a backbone-only file gets a zero rank-1 adapter.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = tinylm::load_checkpoint(&path).map_err(err)?;
        let adapter = ckpt.adapter.clone().unwrap_or_else(|| {
            tinylm::AdapterParams::zeros(tinylm::AdapterShape {
                vocab_size: ckpt.vocab.len(),
                dim: ckpt.backbone.dim,
                rank: 1,
            })
        });
        Ok(PyModel { ckpt, adapter })
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.ckpt.vocab.len()
    }

    #[getter]
    fn has_adapter(&self) -> bool {
        self.ckpt.adapter.is_some()
    }

    /// Greedy answer to an instruction.
    #[pyo3(signature = (instruction, max_tokens = 32))]
    fn respond(&self, instruction: &str, max_tokens: usize) -> String {
        let m = LanguageModel::new(&self.ckpt.vocab, &self.ckpt.backbone, &self.adapter);
        respond(&m, instruction, &EvalConfig { max_tokens, ..EvalConfig::default() })
    }

    /// Mean next-token cross-entropy of `output` given `instruction`.
    fn response_cross_entropy(&self, instruction: &str, output: &str) -> f64 {
        let m = LanguageModel::new(&self.ckpt.vocab, &self.ckpt.backbone, &self.adapter);
        let prefix = self.ckpt.vocab.instruction_prompt(instruction);
        let mut seq = m.encode(output);
        seq.push(tinylm::EOS);
        m.sequence_logprob(&seq, &prefix).1
    }
}

#[pymodule]
fn fedpit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(lcs_length, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_l, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(distinct_n, m)?)?;
    m.add_function(wrap_pyfunction!(toy_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(partition, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyModel>()?;
    Ok(())
}
