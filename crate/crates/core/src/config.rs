//! Declarative run configuration. One JSON file names the datasets, splits,
//! encoder, hyperparameters, endpoints, seeds, and the ablation grid;
//! command-line `--set key.path=value` pairs override individual values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{SarcasmSplitTargets, SentimentFinetuneTargets};
use crate::llm_eval::EvalOptions;
use crate::metrics::InvalidPredictionPolicy;
use crate::synthgen::TranslateOptions;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolkitConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub translation: TranslationSection,
    #[serde(default)]
    pub llm: LlmSection,
    #[serde(default)]
    pub experiments: ExperimentsSection,
}

fn default_seed() -> u64 {
    42
}

impl Default for ToolkitConfig {
    fn default() -> Self {
        serde_json::from_value(serde_json::json!({})).expect("defaults are valid")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub sarcasm_en: Option<PathBuf>,
    pub sarcasm_hinglish: Option<PathBuf>,
    pub sentiment_en: Option<PathBuf>,
    pub sentiment_hinglish: Option<PathBuf>,
    #[serde(default = "default_splits_dir")]
    pub splits_dir: PathBuf,
    #[serde(default)]
    pub sarcasm_targets: SarcasmSplitTargets,
    #[serde(default)]
    pub sentiment_targets: SentimentFinetuneTargets,
}

fn default_splits_dir() -> PathBuf {
    PathBuf::from("data/splits")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSection {
    /// Pretrained-weights reference: an artifact directory or a `synth:`
    /// specification.
    #[serde(default = "default_encoder_id")]
    pub base_encoder_id: String,
}

fn default_encoder_id() -> String {
    "synth:hidden=32,layers=2,heads=2,ffn=64,max_len=64,vocab=2000,seed=0".to_string()
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            base_encoder_id: default_encoder_id(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Fine-tune stages reuse the training epochs unless set.
    pub finetune_epochs: Option<usize>,
    #[serde(default = "default_max_sequence_length")]
    pub max_sequence_length: usize,
    #[serde(default)]
    pub freeze_encoder: bool,
}

fn default_batch_size() -> usize {
    32
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_epochs() -> usize {
    100
}
fn default_max_sequence_length() -> usize {
    64
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            epochs: default_epochs(),
            finetune_epochs: None,
            max_sequence_length: default_max_sequence_length(),
            freeze_encoder: false,
        }
    }
}

impl TrainingSection {
    /// Stage hyperparameters for the given label count and seed.
    pub fn classifier_config(
        &self,
        base_encoder_id: &str,
        num_labels: usize,
        seed: u64,
    ) -> crate::classifier::ClassifierConfig {
        crate::classifier::ClassifierConfig {
            base_encoder_id: base_encoder_id.to_string(),
            num_labels,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            optimizer: Default::default(),
            loss: Default::default(),
            max_sequence_length: self.max_sequence_length,
            seed,
            freeze_encoder: self.freeze_encoder,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslationSection {
    #[serde(default = "default_endpoint")]
    pub endpoint: String,
    #[serde(default = "default_translation_model")]
    pub model: String,
    /// Name of the environment variable holding the API credential.
    pub credential_env: Option<String>,
    #[serde(default = "default_response_field")]
    pub response_field: String,
    #[serde(default = "default_translation_batch")]
    pub batch_size: usize,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_refusal_phrases")]
    pub refusal_phrases: Vec<String>,
    #[serde(default = "default_translation_store")]
    pub store: PathBuf,
    #[serde(default)]
    pub retry_failed: bool,
}

fn default_endpoint() -> String {
    "http://localhost:11434/api/generate".to_string()
}
fn default_translation_model() -> String {
    "gemini-2.5-pro".to_string()
}
fn default_response_field() -> String {
    "response".to_string()
}
fn default_translation_batch() -> usize {
    20
}
fn default_retries() -> usize {
    2
}
fn default_parallelism() -> usize {
    1
}
fn default_refusal_phrases() -> Vec<String> {
    TranslateOptions::default().refusal_phrases
}
fn default_translation_store() -> PathBuf {
    PathBuf::from("cache/translations.jsonl")
}

impl Default for TranslationSection {
    fn default() -> Self {
        serde_json::from_value(serde_json::json!({})).expect("defaults are valid")
    }
}

impl TranslationSection {
    pub fn translate_options(&self) -> TranslateOptions {
        TranslateOptions {
            max_retries: self.max_retries,
            refusal_phrases: self.refusal_phrases.clone(),
            parallelism: self.parallelism,
            retry_failed: self.retry_failed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSection {
    #[serde(default = "default_endpoint")]
    pub endpoint: String,
    #[serde(default = "default_models")]
    pub models: Vec<String>,
    #[serde(default = "default_response_field")]
    pub response_field: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_retries")]
    pub max_transport_retries: usize,
    #[serde(default = "default_parse_retries")]
    pub max_parse_retries: usize,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_llm_cache")]
    pub cache: PathBuf,
    #[serde(default = "default_k_per_class")]
    pub fewshot_k_per_class: usize,
    /// Exemplar pool; defaults to the code-mixed fine-tune split.
    pub fewshot_pool: Option<PathBuf>,
    #[serde(default)]
    pub unparseable_policy: InvalidPredictionPolicy,
}

fn default_models() -> Vec<String> {
    vec![
        "llama3.1".to_string(),
        "mistral".to_string(),
        "gemma3".to_string(),
        "phi4".to_string(),
    ]
}
fn default_parse_retries() -> usize {
    1
}
fn default_llm_cache() -> PathBuf {
    PathBuf::from("cache/llm_responses.jsonl")
}
fn default_k_per_class() -> usize {
    2
}

impl Default for LlmSection {
    fn default() -> Self {
        serde_json::from_value(serde_json::json!({})).expect("defaults are valid")
    }
}

impl LlmSection {
    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            max_transport_retries: self.max_transport_retries,
            max_parse_retries: self.max_parse_retries,
            parallelism: self.parallelism,
        }
    }

    pub fn fewshot_pool_path(&self, splits_dir: &Path) -> PathBuf {
        self.fewshot_pool
            .clone()
            .unwrap_or_else(|| splits_dir.join("finetune_hinglish.jsonl"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentsSection {
    #[serde(default = "default_runs_dir")]
    pub runs_dir: PathBuf,
    /// Training-subset sizes; the full training size is appended at run
    /// time when absent.
    #[serde(default = "default_ablation_sizes")]
    pub ablation_sizes: Vec<usize>,
    /// Published reference numbers for regression comparison in reports.
    pub reference_results: Option<PathBuf>,
    #[serde(default = "default_bootstrap_iterations")]
    pub bootstrap_iterations: usize,
    /// Per-iteration resample size; defaults to the test-set size.
    pub bootstrap_resample_size: Option<usize>,
}

fn default_runs_dir() -> PathBuf {
    PathBuf::from("runs")
}
fn default_ablation_sizes() -> Vec<usize> {
    vec![1000, 2000, 5000, 10000, 15000]
}
fn default_bootstrap_iterations() -> usize {
    2344
}

impl Default for ExperimentsSection {
    fn default() -> Self {
        serde_json::from_value(serde_json::json!({})).expect("defaults are valid")
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Unreadable { path: String, message: String },
    #[error("config: {0}")]
    Invalid(String),
    #[error("override `{0}` is not of the form key.path=value")]
    BadOverride(String),
}

impl ToolkitConfig {
    /// Loads the config file (when present) and applies `--set` overrides.
    /// Override values parse as JSON when possible, else as strings.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value: serde_json::Value = if path.exists() {
            let raw = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            serde_json::from_str(&raw).map_err(|e| ConfigError::Unreadable {
                path: path.display().to_string(),
                message: e.to_string(),
            })?
        } else {
            serde_json::json!({})
        };
        for entry in overrides {
            let (key, raw) = entry
                .split_once('=')
                .ok_or_else(|| ConfigError::BadOverride(entry.clone()))?;
            let parsed = serde_json::from_str(raw)
                .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            set_path(&mut value, key, parsed).map_err(ConfigError::Invalid)?;
        }
        serde_json::from_value(value).map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

fn set_path(
    value: &mut serde_json::Value,
    key: &str,
    new_value: serde_json::Value,
) -> Result<(), String> {
    let mut cursor = value;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(format!("empty segment in key `{key}`"));
        }
        let map = cursor
            .as_object_mut()
            .ok_or_else(|| format!("`{key}` does not address an object"))?;
        if i + 1 == parts.len() {
            map.insert(part.to_string(), new_value);
            return Ok(());
        }
        cursor = map
            .entry(part.to_string())
            .or_insert_with(|| serde_json::json!({}));
    }
    Err(format!("empty key `{key}`"))
}
