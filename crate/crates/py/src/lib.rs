//! Python bindings for the core toolkit: script profiling, prompt
//! rendering, response parsing, evaluation metrics, and the classifier
//! train/fine-tune/predict loop.

use std::path::{Path, PathBuf};

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use sarcbench::classifier::{
    self, ClassifierConfig, ModelCheckpoint, PredictionOutcome,
};
use sarcbench::corpus::{self, DatasetSplit, SplitName, TaskLabel};
use sarcbench::llm_eval::{self, ParsedLabel, PromptMode, PromptTemplate};
use sarcbench::metrics::{self, ConfusionMatrix2x2};
use sarcbench::synthgen;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_task_label(value: &str) -> PyResult<TaskLabel> {
    TaskLabel::parse(value).ok_or_else(|| value_err(format!("unknown label `{value}`")))
}

/// Whitespace-token script counts: (latin, devanagari, other).
#[pyfunction]
fn script_profile(text: &str) -> (usize, usize, usize) {
    let profile = corpus::script_profile(text);
    (
        profile.latin_tokens,
        profile.devanagari_tokens,
        profile.other_tokens,
    )
}

/// Maps a raw model response to "sarcastic", "non-sarcastic", or
/// "unparseable".
#[pyfunction]
fn parse_label(raw: &str) -> &'static str {
    match llm_eval::parse_label(raw) {
        ParsedLabel::Sarcastic => "sarcastic",
        ParsedLabel::NonSarcastic => "non-sarcastic",
        ParsedLabel::Unparseable => "unparseable",
    }
}

/// Renders the classification prompt for one sentence. `exemplars` is a
/// list of (text, label) pairs; passing any switches to few-shot mode.
#[pyfunction]
#[pyo3(signature = (sentence, exemplars=None))]
fn render_prompt(sentence: &str, exemplars: Option<Vec<(String, String)>>) -> PyResult<String> {
    let template = match exemplars {
        None => PromptTemplate::zero_shot(),
        Some(pairs) => {
            let exemplars = pairs
                .into_iter()
                .map(|(text, label)| Ok((text, parse_task_label(&label)?)))
                .collect::<PyResult<Vec<_>>>()?;
            PromptTemplate::new(PromptMode::FewShot, llm_eval::CLASSIFY_PROMPT_BODY, exemplars)
                .map_err(value_err)?
        }
    };
    Ok(llm_eval::render_prompt(&template, sentence))
}

/// Builds the batched translation prompt for a list of sentences.
#[pyfunction]
fn translation_prompt(sentences: Vec<String>) -> PyResult<String> {
    let pairs: Vec<(String, String)> = sentences
        .into_iter()
        .enumerate()
        .map(|(i, text)| (i.to_string(), text))
        .collect();
    synthgen::build_translation_prompt(&pairs).map_err(value_err)
}

/// Binary confusion matrix with Sarcastic as the positive class.
#[pyclass(name = "ConfusionMatrix")]
struct PyConfusionMatrix {
    inner: ConfusionMatrix2x2,
}

#[pymethods]
impl PyConfusionMatrix {
    #[new]
    fn new(tp: usize, fn_: usize, fp: usize, tn: usize) -> Self {
        PyConfusionMatrix {
            inner: ConfusionMatrix2x2::new(tp, fn_, fp, tn),
        }
    }

    fn accuracy(&self) -> PyResult<f64> {
        self.inner.accuracy().map_err(value_err)
    }

    fn macro_f1(&self) -> PyResult<f64> {
        self.inner.macro_f1().map_err(value_err)
    }

    /// (precision, recall, f1) for the positive class.
    fn positive_class(&self) -> (f64, f64, f64) {
        let m = self.inner.positive_class();
        (m.precision, m.recall, m.f1)
    }

    fn negative_class(&self) -> (f64, f64, f64) {
        let m = self.inner.negative_class();
        (m.precision, m.recall, m.f1)
    }

    fn __repr__(&self) -> String {
        format!(
            "ConfusionMatrix(tp={}, fn={}, fp={}, tn={})",
            self.inner.true_pos, self.inner.false_neg, self.inner.false_pos, self.inner.true_neg
        )
    }
}

/// Step-wise precision–recall curve. Returns (points, auprc) where points
/// is a list of (recall, precision).
#[pyfunction]
fn pr_curve(pairs: Vec<(f64, bool)>) -> PyResult<(Vec<(f64, f64)>, f64)> {
    let curve = metrics::pr_curve(&pairs).map_err(value_err)?;
    Ok((
        curve.points.iter().map(|p| (p.recall, p.precision)).collect(),
        curve.auprc,
    ))
}

/// Paired bootstrap over per-item correctness vectors. Returns a dict with
/// delta_mean, ci_low, ci_high, and significant.
#[pyfunction]
#[pyo3(signature = (a_correct, b_correct, n_iterations=2344, seed=0, resample_size=None))]
fn paired_bootstrap<'py>(
    py: Python<'py>,
    a_correct: Vec<bool>,
    b_correct: Vec<bool>,
    n_iterations: usize,
    seed: u64,
    resample_size: Option<usize>,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let result = metrics::paired_bootstrap_correctness(
        &a_correct,
        &b_correct,
        n_iterations,
        resample_size,
        seed,
    )
    .map_err(value_err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("n_iterations", result.n_iterations)?;
    dict.set_item("resample_size", result.resample_size)?;
    dict.set_item("delta_mean", result.delta_mean)?;
    dict.set_item("ci_low", result.ci_low)?;
    dict.set_item("ci_high", result.ci_high)?;
    dict.set_item("significant", result.significant)?;
    Ok(dict)
}

/// A labeled dataset split backed by the JSONL record format.
#[pyclass(name = "Dataset")]
struct PyDataset {
    inner: DatasetSplit,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn from_jsonl(path: PathBuf) -> PyResult<Self> {
        let records = corpus::load_labeled(&path).map_err(value_err)?;
        Ok(PyDataset {
            inner: DatasetSplit::new(SplitName::Train, records).map_err(value_err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Per-class record counts.
    fn class_counts(&self) -> std::collections::BTreeMap<String, usize> {
        self.inner
            .class_counts
            .iter()
            .map(|(label, count)| (label.as_str().to_string(), *count))
            .collect()
    }

    /// Downsamples every class to the minimum class count.
    fn balanced_undersample(&self, seed: u64) -> PyResult<PyDataset> {
        let records = corpus::balanced_undersample(&self.inner.records, seed).map_err(value_err)?;
        Ok(PyDataset {
            inner: DatasetSplit::new(self.inner.name, records).map_err(value_err)?,
        })
    }

    fn save_jsonl(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_jsonl(&path).map_err(value_err)
    }

    /// (id, text, label) triples in dataset order.
    fn records(&self) -> Vec<(String, String, String)> {
        self.inner
            .records
            .iter()
            .map(|r| (r.id.clone(), r.text.clone(), r.label.as_str().to_string()))
            .collect()
    }
}

fn classifier_config(
    encoder_id: &str,
    num_labels: usize,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    max_sequence_length: usize,
    seed: u64,
) -> ClassifierConfig {
    ClassifierConfig {
        base_encoder_id: encoder_id.to_string(),
        num_labels,
        batch_size,
        learning_rate,
        epochs,
        optimizer: Default::default(),
        loss: Default::default(),
        max_sequence_length,
        seed,
        freeze_encoder: false,
    }
}

/// A trained classifier checkpoint.
#[pyclass(name = "Model")]
struct PyModel {
    inner: ModelCheckpoint,
}

#[pymethods]
impl PyModel {
    /// Trains on the dataset starting from the referenced encoder weights
    /// (`synth:` references synthesize deterministic toy weights).
    #[staticmethod]
    #[pyo3(signature = (dataset, encoder_id, epochs=3, batch_size=32, learning_rate=1e-3, max_sequence_length=64, seed=0))]
    fn train(
        dataset: &PyDataset,
        encoder_id: &str,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        max_sequence_length: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let num_labels = dataset
            .inner
            .task()
            .map(|t| t.num_labels())
            .ok_or_else(|| value_err("dataset is empty"))?;
        let config = classifier_config(
            encoder_id,
            num_labels,
            epochs,
            batch_size,
            learning_rate,
            max_sequence_length,
            seed,
        );
        let run = classifier::train(&config, &dataset.inner).map_err(value_err)?;
        Ok(PyModel {
            inner: run.checkpoint,
        })
    }

    /// Sequential transfer fine-tuning; the head is replaced only when the
    /// label cardinality changes.
    #[pyo3(signature = (dataset, epochs=1, seed=0))]
    fn fine_tune(&self, dataset: &PyDataset, epochs: usize, seed: u64) -> PyResult<PyModel> {
        let num_labels = dataset
            .inner
            .task()
            .map(|t| t.num_labels())
            .ok_or_else(|| value_err("dataset is empty"))?;
        let mut config = self.inner.config.clone();
        config.num_labels = num_labels;
        config.epochs = epochs;
        config.seed = seed;
        let run = classifier::sequential_fine_tune(&self.inner, &dataset.inner, &config)
            .map_err(value_err)?;
        Ok(PyModel {
            inner: run.checkpoint,
        })
    }

    /// (sentence_id, predicted_label, score) per record; score is None for
    /// non-binary tasks.
    fn predict(&self, dataset: &PyDataset) -> PyResult<Vec<(String, String, Option<f32>)>> {
        let preds = classifier::predict(&self.inner, &dataset.inner.records, "dataset")
            .map_err(value_err)?;
        Ok(preds
            .entries
            .into_iter()
            .map(|e| {
                let label = match e.predicted {
                    PredictionOutcome::Label(l) => l.as_str().to_string(),
                    other => other.as_str().to_string(),
                };
                (e.sentence_id, label, e.score)
            })
            .collect())
    }

    #[getter]
    fn provenance(&self) -> Vec<String> {
        self.inner.provenance.clone()
    }

    #[getter]
    fn num_labels(&self) -> usize {
        self.inner.head_spec().num_labels
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(Path::new(&path)).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: ModelCheckpoint::load(Path::new(&path)).map_err(value_err)?,
        })
    }
}

#[pymodule]
fn sarcbench_rs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(script_profile, m)?)?;
    m.add_function(wrap_pyfunction!(parse_label, m)?)?;
    m.add_function(wrap_pyfunction!(render_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(translation_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(pr_curve, m)?)?;
    m.add_function(wrap_pyfunction!(paired_bootstrap, m)?)?;
    m.add_class::<PyConfusionMatrix>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    Ok(())
}
