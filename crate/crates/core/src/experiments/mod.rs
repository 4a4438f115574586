//! Study orchestration: the five fine-tuning strategies, the LLM grid over
//! models × prompting modes × test languages, training-size ablations, and
//! report emission. Every cell persists its predictions and metrics so
//! results stay recomputable offline.

pub mod report;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{
    predict, sequential_fine_tune, train, write_training_log, ClassifierConfig, ClassifierError,
    ModelCheckpoint, PredictionSet,
};
use crate::config::ToolkitConfig;
use crate::corpus::{CorpusError, DatasetSplit, SplitName, Task, TaskLabel};
use crate::llm_eval::{
    build_fewshot_exemplars, classify_dataset, EvalOptions, InferenceClient, LlmEvalError,
    PromptMode, PromptTemplate, ResponseCache, RunReport,
};
use crate::metrics::{
    confusion_with_policy, pr_curve, score_pairs, ConfusionMatrix2x2, InvalidPredictionPolicy,
    MetricsError,
};

const ABLATION_SEED_SALT: u64 = 0x61626c61;

/// The five fine-tuning strategies of the model comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyId {
    #[serde(rename = "NO_FT")]
    NoFt,
    #[serde(rename = "FT_EN_SARC")]
    FtEnSarc,
    #[serde(rename = "FT_CM_SARC")]
    FtCmSarc,
    #[serde(rename = "FT_EN_SENT")]
    FtEnSent,
    #[serde(rename = "FT_CM_SENT")]
    FtCmSent,
}

impl StrategyId {
    pub fn all() -> [StrategyId; 5] {
        [
            StrategyId::NoFt,
            StrategyId::FtEnSarc,
            StrategyId::FtCmSarc,
            StrategyId::FtEnSent,
            StrategyId::FtCmSent,
        ]
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyId::NoFt => "NO_FT",
            StrategyId::FtEnSarc => "FT_EN_SARC",
            StrategyId::FtCmSarc => "FT_CM_SARC",
            StrategyId::FtEnSent => "FT_EN_SENT",
            StrategyId::FtCmSent => "FT_CM_SENT",
        }
    }

    pub fn parse(value: &str) -> Option<Self> {
        StrategyId::all()
            .into_iter()
            .find(|s| s.as_str().eq_ignore_ascii_case(value))
    }

    fn uses_sentiment(&self) -> bool {
        matches!(self, StrategyId::FtEnSent | StrategyId::FtCmSent)
    }

    /// Human-readable fine-tune data description for report tables.
    pub fn finetune_description(&self) -> &'static str {
        match self {
            StrategyId::NoFt => "none",
            StrategyId::FtEnSarc => "english sarcasm",
            StrategyId::FtCmSarc => "code-mixed sarcasm",
            StrategyId::FtEnSent => "english sentiment",
            StrategyId::FtCmSent => "code-mixed sentiment",
        }
    }
}

impl std::fmt::Display for StrategyId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Split references and per-stage hyperparameters for one strategy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategySpec {
    pub id: StrategyId,
    pub train_split: PathBuf,
    pub finetune_split: Option<PathBuf>,
    pub test_split: PathBuf,
    pub train_config: ClassifierConfig,
    pub finetune_config: Option<ClassifierConfig>,
}

impl StrategySpec {
    /// Builds the spec from the toolkit config using the standard split
    /// file layout under `data.splits_dir`.
    pub fn from_config(config: &ToolkitConfig, id: StrategyId, seed: u64) -> Self {
        let splits = &config.data.splits_dir;
        let encoder_id = &config.encoder.base_encoder_id;
        let finetune_split = match id {
            StrategyId::NoFt => None,
            StrategyId::FtEnSarc => Some(splits.join("finetune_english.jsonl")),
            StrategyId::FtCmSarc => Some(splits.join("finetune_hinglish.jsonl")),
            StrategyId::FtEnSent => Some(splits.join("sentiment_finetune_english.jsonl")),
            StrategyId::FtCmSent => Some(splits.join("sentiment_finetune_hinglish.jsonl")),
        };
        let finetune_config = finetune_split.as_ref().map(|_| {
            let num_labels = if id.uses_sentiment() { 3 } else { 2 };
            let mut stage = config
                .training
                .classifier_config(encoder_id, num_labels, seed);
            if let Some(epochs) = config.training.finetune_epochs {
                stage.epochs = epochs;
            }
            stage
        });
        StrategySpec {
            id,
            train_split: splits.join("train.jsonl"),
            finetune_split,
            test_split: splits.join("test_hinglish.jsonl"),
            train_config: config.training.classifier_config(encoder_id, 2, seed),
            finetune_config,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        match (self.id, &self.finetune_split) {
            (StrategyId::NoFt, Some(_)) => Err(ExperimentError::BadInput(
                "NO_FT carries no fine-tune split".into(),
            )),
            (StrategyId::NoFt, None) => Ok(()),
            (_, None) => Err(ExperimentError::BadInput(format!(
                "{} requires a fine-tune split",
                self.id
            ))),
            (_, Some(_)) => {
                if self.finetune_config.is_none() {
                    return Err(ExperimentError::BadInput(
                        "fine-tune split given without a fine-tune config".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// Coordinates of one experiment cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CellId {
    Strategy {
        id: StrategyId,
    },
    LlmCell {
        model: String,
        mode: PromptMode,
        dataset: String,
    },
}

impl CellId {
    pub fn dir_name(&self) -> String {
        match self {
            CellId::Strategy { id } => format!("strategy_{}", id.as_str().to_lowercase()),
            CellId::LlmCell {
                model,
                mode,
                dataset,
            } => format!(
                "llm_{}_{}_{dataset}",
                sanitize(model),
                mode.as_str()
            ),
        }
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_alphanumeric() || c == '.' || c == '-' { c } else { '-' })
        .collect()
}

/// Metrics of one finished cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix2x2,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auprc: Option<f64>,
}

/// Paths of the artifacts a cell persisted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactPaths {
    pub dir: PathBuf,
    pub predictions: PathBuf,
    pub metrics: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

/// One cell outcome; failed cells carry the error text instead of metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub cell: CellId,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsBundle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub artifacts: ArtifactPaths,
}

/// One training-size ablation measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub train_size: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Llm(#[from] LlmEvalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    BadInput(String),
    #[error("[{cell}] {source}")]
    InCell {
        cell: String,
        #[source]
        source: Box<ExperimentError>,
    },
}

fn in_cell(cell: &str) -> impl Fn(ExperimentError) -> ExperimentError + '_ {
    move |source| ExperimentError::InCell {
        cell: cell.to_string(),
        source: Box::new(source),
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ExperimentError + '_ {
    move |e| ExperimentError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let json = serde_json::to_string_pretty(value).expect("serializable value");
    std::fs::write(path, json).map_err(io_err(path))
}

/// Infers the split name from a file stem (`test_*`, `*finetune*`, else
/// train).
pub fn split_name_from_stem(path: &Path) -> SplitName {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    if stem.starts_with("test") {
        SplitName::Test
    } else if stem.contains("finetune") {
        if stem.ends_with("hinglish") {
            SplitName::FineTuneHinglish
        } else {
            SplitName::FineTuneEnglish
        }
    } else {
        SplitName::Train
    }
}

fn dataset_id(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string()
}

pub fn load_split(path: &Path) -> Result<DatasetSplit, ExperimentError> {
    Ok(DatasetSplit::load_jsonl(split_name_from_stem(path), path)?)
}

/// Evaluation checkpoint for a strategy. Sentiment fine-tuning leaves a
/// three-label head that cannot score the binary test task, so the binary
/// head learned in the training stage is re-attached on top of the
/// fine-tuned encoder.
fn eval_checkpoint(
    trained: &ModelCheckpoint,
    finetuned: Option<ModelCheckpoint>,
    test_task: Task,
) -> ModelCheckpoint {
    match finetuned {
        None => trained.clone(),
        Some(ft) => {
            if ft.head.num_labels() == test_task.num_labels() {
                ft
            } else {
                let mut provenance = ft.provenance.clone();
                provenance.push(format!("head:{}", trained.provenance.join(">")));
                ModelCheckpoint {
                    encoder: ft.encoder,
                    head: trained.head.clone(),
                    provenance,
                    config: trained.config.clone(),
                    label_map: trained.label_map.clone(),
                }
            }
        }
    }
}

/// Confusion-based metrics plus the step-wise AUPRC when every entry
/// carries a score.
pub fn classifier_metrics(
    preds: &PredictionSet,
    golds: &DatasetSplit,
) -> Result<MetricsBundle, ExperimentError> {
    let cm = confusion_with_policy(preds, golds, InvalidPredictionPolicy::Incorrect)?;
    let auprc = if preds.entries.iter().all(|e| e.score.is_some()) {
        Some(pr_curve(&score_pairs(preds, golds)?)?.auprc)
    } else {
        None
    };
    Ok(MetricsBundle {
        accuracy: cm.accuracy()?,
        macro_f1: cm.macro_f1()?,
        confusion: cm,
        auprc,
    })
}

fn run_pipeline(
    spec: &StrategySpec,
    train_split: &DatasetSplit,
    test_split: &DatasetSplit,
    cell_dir: &Path,
    save_checkpoint: bool,
) -> Result<(MetricsBundle, PredictionSet, Option<PathBuf>), ExperimentError> {
    std::fs::create_dir_all(cell_dir).map_err(io_err(cell_dir))?;
    let train_run = train(&spec.train_config, train_split)?;
    write_training_log(&cell_dir.join("training_log.csv"), &train_run.epoch_losses)?;

    let finetuned = match (&spec.finetune_split, &spec.finetune_config) {
        (Some(path), Some(config)) => {
            let ft_split = load_split(path)?;
            let ft_run = sequential_fine_tune(&train_run.checkpoint, &ft_split, config)?;
            write_training_log(&cell_dir.join("finetune_log.csv"), &ft_run.epoch_losses)?;
            Some(ft_run.checkpoint)
        }
        _ => None,
    };

    let test_task = test_split.task().ok_or(ClassifierError::EmptySplit)?;
    let checkpoint = eval_checkpoint(&train_run.checkpoint, finetuned, test_task);
    let checkpoint_path = if save_checkpoint {
        let path = cell_dir.join("checkpoint");
        checkpoint.save(&path)?;
        Some(path)
    } else {
        None
    };

    let preds = predict(&checkpoint, &test_split.records, &dataset_id(&spec.test_split))?;
    let bundle = classifier_metrics(&preds, test_split)?;
    Ok((bundle, preds, checkpoint_path))
}

/// Runs one strategy end to end (train → optional fine-tune → predict →
/// metrics) and persists everything needed to recompute the metrics.
pub fn run_strategy(
    spec: &StrategySpec,
    seed: u64,
    out_dir: &Path,
) -> Result<ExperimentResult, ExperimentError> {
    let cell = CellId::Strategy { id: spec.id };
    let cell_name = cell.dir_name();
    let run = || -> Result<ExperimentResult, ExperimentError> {
        spec.validate()?;
        let train_split = load_split(&spec.train_split)?;
        let test_split = load_split(&spec.test_split)?;
        let cell_dir = out_dir.join(&cell_name);
        let (bundle, preds, checkpoint) =
            run_pipeline(spec, &train_split, &test_split, &cell_dir, true)?;
        let artifacts = ArtifactPaths {
            dir: cell_dir.clone(),
            predictions: cell_dir.join("predictions.json"),
            metrics: cell_dir.join("metrics.json"),
            checkpoint,
        };
        preds
            .save(&artifacts.predictions)
            .map_err(io_err(&artifacts.predictions))?;
        write_json(&artifacts.metrics, &bundle)?;
        let result = ExperimentResult {
            cell: cell.clone(),
            seed,
            metrics: Some(bundle),
            error: None,
            artifacts,
        };
        write_json(&cell_dir.join("result.json"), &result)?;
        Ok(result)
    };
    run().map_err(in_cell(&cell_name))
}

/// Shared infrastructure for LLM grid cells.
pub struct LlmGridOptions<'a> {
    pub client: &'a dyn InferenceClient,
    pub cache: &'a ResponseCache,
    pub eval: EvalOptions,
    pub fewshot_pool: Option<&'a DatasetSplit>,
    pub k_per_class: usize,
    pub policy: InvalidPredictionPolicy,
    pub seed: u64,
}

/// Runs every (model, mode, test split) cell. Cells are independent: a
/// failed cell is recorded with its error and the rest continue.
pub fn run_llm_grid(
    models: &[String],
    modes: &[PromptMode],
    test_splits: &[PathBuf],
    opts: &LlmGridOptions,
    out_dir: &Path,
) -> Result<Vec<ExperimentResult>, ExperimentError> {
    let mut splits: HashMap<PathBuf, DatasetSplit> = HashMap::new();
    for path in test_splits {
        splits.insert(path.clone(), load_split(path)?);
    }
    let mut results = Vec::with_capacity(models.len() * modes.len() * test_splits.len());
    for model in models {
        for mode in modes {
            for path in test_splits {
                let split = &splits[path];
                let cell = CellId::LlmCell {
                    model: model.clone(),
                    mode: *mode,
                    dataset: dataset_id(path),
                };
                results.push(run_llm_cell(&cell, model, *mode, split, opts, out_dir));
            }
        }
    }
    Ok(results)
}

fn run_llm_cell(
    cell: &CellId,
    model: &str,
    mode: PromptMode,
    split: &DatasetSplit,
    opts: &LlmGridOptions,
    out_dir: &Path,
) -> ExperimentResult {
    let cell_dir = out_dir.join(cell.dir_name());
    let artifacts = ArtifactPaths {
        dir: cell_dir.clone(),
        predictions: cell_dir.join("predictions.json"),
        metrics: cell_dir.join("metrics.json"),
        checkpoint: None,
    };
    let run = || -> Result<(MetricsBundle, PredictionSet, RunReport), ExperimentError> {
        std::fs::create_dir_all(&cell_dir).map_err(io_err(&cell_dir))?;
        let template = match mode {
            PromptMode::ZeroShot => PromptTemplate::zero_shot(),
            PromptMode::FewShot => {
                let pool = opts.fewshot_pool.ok_or_else(|| {
                    ExperimentError::BadInput("few-shot cells need an exemplar pool".into())
                })?;
                let test_ids = split.records.iter().map(|r| r.id.clone()).collect();
                let exemplars =
                    build_fewshot_exemplars(pool, &test_ids, opts.k_per_class, opts.seed)?;
                PromptTemplate::few_shot(exemplars)?
            }
        };
        let (preds, report) =
            classify_dataset(opts.client, model, &template, split, opts.cache, &opts.eval)?;
        let cm = confusion_with_policy(&preds, split, opts.policy)?;
        let bundle = MetricsBundle {
            accuracy: cm.accuracy()?,
            macro_f1: cm.macro_f1()?,
            confusion: cm,
            auprc: None,
        };
        Ok((bundle, preds, report))
    };
    let result = match run() {
        Ok((bundle, preds, report)) => {
            let persisted = preds
                .save(&artifacts.predictions)
                .map_err(io_err(&artifacts.predictions))
                .and_then(|_| write_json(&artifacts.metrics, &bundle))
                .and_then(|_| write_json(&cell_dir.join("run_report.json"), &report));
            match persisted {
                Ok(()) => ExperimentResult {
                    cell: cell.clone(),
                    seed: opts.seed,
                    metrics: Some(bundle),
                    error: None,
                    artifacts,
                },
                Err(e) => ExperimentResult {
                    cell: cell.clone(),
                    seed: opts.seed,
                    metrics: None,
                    error: Some(e.to_string()),
                    artifacts,
                },
            }
        }
        Err(e) => ExperimentResult {
            cell: cell.clone(),
            seed: opts.seed,
            metrics: None,
            error: Some(e.to_string()),
            artifacts,
        },
    };
    if std::fs::create_dir_all(&cell_dir).is_ok() {
        let _ = write_json(&cell_dir.join("result.json"), &result);
    }
    result
}

/// Trains on progressively larger class-balanced subsets of the training
/// split (subset selection is nested under one seed), fine-tunes per the
/// strategy, and evaluates each point on the fixed test split.
pub fn run_size_ablation(
    spec: &StrategySpec,
    sizes: &[usize],
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<AblationPoint>, ExperimentError> {
    spec.validate()?;
    if sizes.is_empty() {
        return Err(ExperimentError::BadInput("no ablation sizes given".into()));
    }
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(ExperimentError::BadInput(
            "ablation sizes must be sorted ascending".into(),
        ));
    }
    let train_split = load_split(&spec.train_split)?;
    let test_split = load_split(&spec.test_split)?;
    let n_full = train_split.len();
    if let Some(&max) = sizes.last() {
        if max > n_full {
            return Err(ExperimentError::BadInput(format!(
                "ablation size {max} exceeds the training-set size {n_full}"
            )));
        }
    }

    let task = train_split.task().ok_or(ClassifierError::EmptySplit)?;
    let labels: Vec<TaskLabel> = task.labels().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ABLATION_SEED_SALT);
    let mut selection: Vec<Vec<usize>> = Vec::new();
    for label in &labels {
        let mut pool: Vec<usize> = train_split
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == *label)
            .map(|(i, _)| i)
            .collect();
        pool.shuffle(&mut rng);
        selection.push(pool);
    }

    let ablation_dir = out_dir.join(format!(
        "ablation_{}",
        spec.id.as_str().to_lowercase()
    ));
    std::fs::create_dir_all(&ablation_dir).map_err(io_err(&ablation_dir))?;

    let mut points = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let per_class = size / labels.len();
        let mut kept: Vec<usize> = selection
            .iter()
            .flat_map(|pool| pool.iter().copied().take(per_class))
            .collect();
        kept.sort_unstable();
        let subset = DatasetSplit::new(
            SplitName::Train,
            kept.into_iter()
                .map(|i| train_split.records[i].clone())
                .collect(),
        )?;
        let actual = subset.len();
        let cell_dir = ablation_dir.join(format!("size_{size}"));
        let (bundle, _preds, _) =
            run_pipeline(spec, &subset, &test_split, &cell_dir, false)
                .map_err(in_cell(&format!("{}@{size}", spec.id)))?;
        points.push(AblationPoint {
            train_size: actual,
            accuracy: bundle.accuracy,
            macro_f1: bundle.macro_f1,
        });
    }
    write_json(&ablation_dir.join("points.json"), &points)?;
    let mut csv = String::from("train_size,accuracy,macro_f1\n");
    for p in &points {
        csv.push_str(&format!("{},{:.5},{:.5}\n", p.train_size, p.accuracy, p.macro_f1));
    }
    let csv_path = ablation_dir.join("points.csv");
    std::fs::write(&csv_path, csv).map_err(io_err(&csv_path))?;
    Ok(points)
}
