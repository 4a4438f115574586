//! Training, sequential transfer fine-tuning, and prediction for a compact
//! bidirectional transformer classifier. Fine-tuning keeps the learned
//! encoder weights and replaces only the classification head when the label
//! cardinality changes.

mod encoder;
mod optimizer;
mod predictions;
mod tokenizer;

use std::collections::HashMap;
use std::path::Path;

use ndarray::{s, Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DatasetSplit, LabeledSentence, TaskLabel};

pub use encoder::{EncoderConfig, EncoderParams, HeadParams};
pub use predictions::{PredictionEntry, PredictionOutcome, PredictionSet};
pub use tokenizer::Vocab;

use encoder::{
    cls_hidden, encoder_backward, encoder_forward, head_backward, head_forward, read_tensors,
    softmax_cross_entropy, write_tensors,
};
use optimizer::AdamW;
use tokenizer::PAD_ID;

const HEAD_SEED_SALT: u64 = 0x68656164;
const BATCH_SEED_SALT: u64 = 0x62617463;
const KFOLD_SEED_SALT: u64 = 0x6b666f6c;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[default]
    AdamW,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LossKind {
    #[default]
    CrossEntropy,
}

/// Hyperparameters for one training or fine-tuning stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub base_encoder_id: String,
    pub num_labels: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default = "default_max_sequence_length")]
    pub max_sequence_length: usize,
    #[serde(default)]
    pub seed: u64,
    /// Train only the classification head, leaving encoder weights fixed.
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

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.batch_size == 0 {
            return Err(ClassifierError::InvalidConfig("batch_size must be ≥ 1".into()));
        }
        if self.epochs == 0 {
            return Err(ClassifierError::InvalidConfig("epochs must be ≥ 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(ClassifierError::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if self.num_labels < 2 {
            return Err(ClassifierError::InvalidConfig("num_labels must be ≥ 2".into()));
        }
        if self.max_sequence_length < 2 {
            return Err(ClassifierError::InvalidConfig(
                "max_sequence_length must be ≥ 2".into(),
            ));
        }
        Ok(())
    }
}

/// Pretrained (or synthesized) encoder weights plus the vocabulary they were
/// built with.
#[derive(Debug, Clone)]
pub struct EncoderArtifact {
    pub vocab: Vocab,
    pub params: EncoderParams,
}

/// Parameters of a `synth:` encoder reference, e.g.
/// `synth:hidden=32,layers=2,heads=2,ffn=64,max_len=64,vocab=2000,seed=7`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthEncoderSpec {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_len: usize,
    pub vocab: usize,
    pub seed: u64,
}

impl Default for SynthEncoderSpec {
    fn default() -> Self {
        SynthEncoderSpec {
            hidden: 32,
            layers: 2,
            heads: 2,
            ffn: 64,
            max_len: 64,
            vocab: 2000,
            seed: 0,
        }
    }
}

impl SynthEncoderSpec {
    pub fn parse(uri: &str) -> Result<Self, String> {
        let rest = uri
            .strip_prefix("synth:")
            .ok_or_else(|| format!("`{uri}` is not a synth reference"))?;
        let mut spec = SynthEncoderSpec::default();
        for pair in rest.split(',').filter(|p| !p.trim().is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| format!("bad key=value pair `{pair}`"))?;
            let value = value.trim();
            let parse_usize =
                || value.parse::<usize>().map_err(|_| format!("bad value `{value}` for `{key}`"));
            match key.trim() {
                "hidden" => spec.hidden = parse_usize()?,
                "layers" => spec.layers = parse_usize()?,
                "heads" => spec.heads = parse_usize()?,
                "ffn" => spec.ffn = parse_usize()?,
                "max_len" => spec.max_len = parse_usize()?,
                "vocab" => spec.vocab = parse_usize()?,
                "seed" => {
                    spec.seed = value
                        .parse::<u64>()
                        .map_err(|_| format!("bad value `{value}` for `seed`"))?
                }
                other => return Err(format!("unknown synth key `{other}`")),
            }
        }
        Ok(spec)
    }
}

impl EncoderArtifact {
    /// Deterministically synthesizes toy encoder weights with a vocabulary
    /// built from the given texts.
    pub fn synthesize<'a>(
        spec: &SynthEncoderSpec,
        vocab_texts: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self, ClassifierError> {
        let vocab = Vocab::build(vocab_texts, spec.vocab);
        let config = EncoderConfig {
            vocab_size: vocab.len(),
            hidden_dim: spec.hidden,
            num_layers: spec.layers,
            num_heads: spec.heads,
            ffn_dim: spec.ffn,
            max_positions: spec.max_len,
        };
        config
            .validate()
            .map_err(|reason| ClassifierError::EncoderUnresolvable {
                id: "synth".into(),
                reason,
            })?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        Ok(EncoderArtifact {
            vocab,
            params: EncoderParams::init(config, &mut rng),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<(), ClassifierError> {
        let io = |path: &Path, e: std::io::Error| ClassifierError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let config_path = dir.join("config.json");
        std::fs::write(
            &config_path,
            serde_json::to_string_pretty(&self.params.config).expect("config serialization"),
        )
        .map_err(|e| io(&config_path, e))?;
        let vocab_path = dir.join("vocab.txt");
        self.vocab.save(&vocab_path).map_err(|e| io(&vocab_path, e))?;
        let weights_path = dir.join("weights.bin");
        write_tensors(&weights_path, &self.params.tensors()).map_err(|e| io(&weights_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self, ClassifierError> {
        let unresolvable = |reason: String| ClassifierError::EncoderUnresolvable {
            id: dir.display().to_string(),
            reason,
        };
        let config_raw = std::fs::read_to_string(dir.join("config.json"))
            .map_err(|e| unresolvable(format!("config.json: {e}")))?;
        let config: EncoderConfig =
            serde_json::from_str(&config_raw).map_err(|e| unresolvable(format!("config.json: {e}")))?;
        let vocab = Vocab::load(&dir.join("vocab.txt"))
            .map_err(|e| unresolvable(format!("vocab.txt: {e}")))?;
        if vocab.len() != config.vocab_size {
            return Err(unresolvable(format!(
                "vocabulary has {} entries, config says {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let map = read_tensors(&dir.join("weights.bin"))
            .map_err(|e| unresolvable(format!("weights.bin: {e}")))?;
        let params = EncoderParams::from_tensor_map(config, &map).map_err(unresolvable)?;
        Ok(EncoderArtifact { vocab, params })
    }
}

/// Resolves a `base_encoder_id`: either a `synth:` reference (vocabulary
/// built from `vocab_texts`) or a directory holding a saved artifact.
pub fn resolve_encoder<'a>(
    base_encoder_id: &str,
    vocab_texts: impl IntoIterator<Item = &'a str>,
) -> Result<EncoderArtifact, ClassifierError> {
    if base_encoder_id.starts_with("synth:") {
        let spec = SynthEncoderSpec::parse(base_encoder_id).map_err(|reason| {
            ClassifierError::EncoderUnresolvable {
                id: base_encoder_id.to_string(),
                reason,
            }
        })?;
        EncoderArtifact::synthesize(&spec, vocab_texts)
    } else {
        let dir = Path::new(base_encoder_id);
        if !dir.is_dir() {
            return Err(ClassifierError::EncoderUnresolvable {
                id: base_encoder_id.to_string(),
                reason: "no such directory".into(),
            });
        }
        EncoderArtifact::load(dir)
    }
}

/// Classification-head shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub num_labels: usize,
}

/// Encoder weights, classification head, label order, and the provenance
/// chain of training stages that produced them.
#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub encoder: EncoderArtifact,
    pub head: HeadParams,
    pub provenance: Vec<String>,
    pub config: ClassifierConfig,
    pub label_map: Vec<TaskLabel>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    provenance: Vec<String>,
    config: ClassifierConfig,
    label_map: Vec<TaskLabel>,
}

impl ModelCheckpoint {
    pub fn head_spec(&self) -> HeadSpec {
        HeadSpec {
            num_labels: self.head.num_labels(),
        }
    }

    pub fn model_id(&self) -> String {
        self.provenance.join(">")
    }

    pub fn save(&self, dir: &Path) -> Result<(), ClassifierError> {
        let io = |path: &Path, e: std::io::Error| ClassifierError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        self.encoder.save(&dir.join("encoder"))?;
        let head_path = dir.join("head.bin");
        write_tensors(&head_path, &self.head.tensors()).map_err(|e| io(&head_path, e))?;
        let manifest = CheckpointManifest {
            provenance: self.provenance.clone(),
            config: self.config.clone(),
            label_map: self.label_map.clone(),
        };
        let manifest_path = dir.join("manifest.json");
        std::fs::write(
            &manifest_path,
            serde_json::to_string_pretty(&manifest).expect("manifest serialization"),
        )
        .map_err(|e| io(&manifest_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self, ClassifierError> {
        let bad = |message: String| ClassifierError::BadCheckpoint {
            path: dir.display().to_string(),
            message,
        };
        let manifest_raw = std::fs::read_to_string(dir.join("manifest.json"))
            .map_err(|e| bad(format!("manifest.json: {e}")))?;
        let manifest: CheckpointManifest =
            serde_json::from_str(&manifest_raw).map_err(|e| bad(format!("manifest.json: {e}")))?;
        let encoder = EncoderArtifact::load(&dir.join("encoder"))?;
        let head_map =
            read_tensors(&dir.join("head.bin")).map_err(|e| bad(format!("head.bin: {e}")))?;
        let head = HeadParams::from_tensor_map(&head_map).map_err(bad)?;
        if manifest.label_map.len() != head.num_labels() {
            return Err(bad(format!(
                "label map has {} labels, head has {}",
                manifest.label_map.len(),
                head.num_labels()
            )));
        }
        Ok(ModelCheckpoint {
            encoder,
            head,
            provenance: manifest.provenance,
            config: manifest.config,
            label_map: manifest.label_map,
        })
    }
}

/// A finished training stage: the checkpoint plus per-epoch mean losses.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub checkpoint: ModelCheckpoint,
    pub epoch_losses: Vec<f64>,
}

/// Per-fold train/validation accuracies from stratified cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KFoldReport {
    pub fold_train_accuracy: Vec<f64>,
    pub fold_val_accuracy: Vec<f64>,
}

impl KFoldReport {
    pub fn mean_train_accuracy(&self) -> f64 {
        mean(&self.fold_train_accuracy)
    }

    pub fn mean_val_accuracy(&self) -> f64 {
        mean(&self.fold_val_accuracy)
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("label cardinality mismatch: config expects {expected}, split has {found}")]
    LabelCardinality { expected: usize, found: usize },
    #[error("split is empty")]
    EmptySplit,
    #[error("cannot resolve encoder artifact `{id}`: {reason}")]
    EncoderUnresolvable { id: String, reason: String },
    #[error("sentences span more than one task")]
    MixedTasks,
    #[error("head expects {expected} labels, input task has {found}")]
    HeadMismatch { expected: usize, found: usize },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("bad checkpoint at {path}: {message}")]
    BadCheckpoint { path: String, message: String },
    #[error("k-fold: {0}")]
    BadKfold(String),
}

fn split_label_map(split: &DatasetSplit) -> Result<Vec<TaskLabel>, ClassifierError> {
    let task = split.task().ok_or(ClassifierError::EmptySplit)?;
    Ok(task.labels().to_vec())
}

fn encode_records(
    vocab: &Vocab,
    records: &[LabeledSentence],
    label_map: &[TaskLabel],
    max_len: usize,
) -> Vec<(Vec<usize>, usize)> {
    records
        .iter()
        .map(|rec| {
            let ids = vocab.encode(&rec.text, max_len);
            let label = label_map
                .iter()
                .position(|l| *l == rec.label)
                .expect("label map covers the split task");
            (ids, label)
        })
        .collect()
}

fn build_batch(
    features: &[(Vec<usize>, usize)],
    idxs: &[usize],
) -> (Array2<usize>, Array2<f32>, Vec<usize>) {
    let t = idxs
        .iter()
        .map(|&i| features[i].0.len())
        .max()
        .unwrap_or(2)
        .max(2);
    let mut ids = Array2::from_elem((idxs.len(), t), PAD_ID);
    let mut mask = Array2::zeros((idxs.len(), t));
    let mut labels = Vec::with_capacity(idxs.len());
    for (row, &i) in idxs.iter().enumerate() {
        for (col, &id) in features[i].0.iter().enumerate() {
            ids[[row, col]] = id;
            mask[[row, col]] = 1.0;
        }
        labels.push(features[i].1);
    }
    (ids, mask, labels)
}

struct ModelState {
    encoder: EncoderParams,
    head: HeadParams,
}

fn run_training(
    state: &mut ModelState,
    features: &[(Vec<usize>, usize)],
    config: &ClassifierConfig,
) -> Vec<f64> {
    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed ^ BATCH_SEED_SALT);
    let mut enc_opt = AdamW::new(config.learning_rate as f32);
    let mut head_opt = AdamW::new(config.learning_rate as f32);
    let n = features.len();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut batch_rng);
        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(config.batch_size) {
            let (ids, mask, labels) = build_batch(features, chunk);
            let cache = encoder_forward(&state.encoder, &ids, &mask);
            let cls = cls_hidden(&cache);
            let logits = head_forward(&cls, &state.head);
            let (loss, _, dlogits) = softmax_cross_entropy(&logits, &labels);
            loss_sum += loss * chunk.len() as f64;

            let (head_grads, dcls) = head_backward(&cls, &state.head, &dlogits);
            if !config.freeze_encoder {
                let (bs, t) = ids.dim();
                let mut d_hidden = Array3::zeros((bs, t, state.encoder.config.hidden_dim));
                d_hidden.slice_mut(s![.., 0, ..]).assign(&dcls);
                let enc_grads = encoder_backward(&state.encoder, &ids, &cache, d_hidden);
                enc_opt.begin_step();
                state
                    .encoder
                    .for_each_pair_mut(&enc_grads, &mut |p, g| enc_opt.update(p, g));
            }
            head_opt.begin_step();
            head_opt.update(
                state.head.w.as_slice_mut().expect("standard layout"),
                head_grads.w.as_slice().expect("standard layout"),
            );
            head_opt.update(
                state.head.b.as_slice_mut().expect("standard layout"),
                head_grads.b.as_slice().expect("standard layout"),
            );
        }
        epoch_losses.push(loss_sum / n as f64);
    }
    epoch_losses
}

fn forward_probs(
    encoder: &EncoderParams,
    head: &HeadParams,
    features: &[(Vec<usize>, usize)],
    batch_size: usize,
) -> Vec<Vec<f32>> {
    let n = features.len();
    let mut out = Vec::with_capacity(n);
    let all: Vec<usize> = (0..n).collect();
    for chunk in all.chunks(batch_size.max(1)) {
        let (ids, mask, _) = build_batch(features, chunk);
        let cache = encoder_forward(encoder, &ids, &mask);
        let cls = cls_hidden(&cache);
        let logits = head_forward(&cls, head);
        let (_, probs, _) = softmax_cross_entropy(&logits, &vec![0; chunk.len()]);
        for row in probs.rows() {
            out.push(row.to_vec());
        }
    }
    out
}

fn effective_max_len(config: &ClassifierConfig, encoder: &EncoderParams) -> usize {
    config.max_sequence_length.min(encoder.config.max_positions)
}

/// Trains a fresh head on top of the referenced encoder. The provenance of
/// the returned checkpoint is `["train:<split name>"]`.
pub fn train(config: &ClassifierConfig, split: &DatasetSplit) -> Result<TrainRun, ClassifierError> {
    config.validate()?;
    let label_map = split_label_map(split)?;
    if label_map.len() != config.num_labels {
        return Err(ClassifierError::LabelCardinality {
            expected: config.num_labels,
            found: label_map.len(),
        });
    }
    let texts: Vec<&str> = split.records.iter().map(|r| r.text.as_str()).collect();
    let artifact = resolve_encoder(&config.base_encoder_id, texts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ HEAD_SEED_SALT);
    let head = HeadParams::init(artifact.params.config.hidden_dim, config.num_labels, &mut rng);

    let max_len = effective_max_len(config, &artifact.params);
    let features = encode_records(&artifact.vocab, &split.records, &label_map, max_len);
    let mut state = ModelState {
        encoder: artifact.params,
        head,
    };
    let epoch_losses = run_training(&mut state, &features, config);
    if let (Some(first), Some(last)) = (epoch_losses.first(), epoch_losses.last()) {
        if last > first {
            log::warn!("training loss did not converge: first {first:.6}, last {last:.6}");
        }
    }
    Ok(TrainRun {
        checkpoint: ModelCheckpoint {
            encoder: EncoderArtifact {
                vocab: artifact.vocab,
                params: state.encoder,
            },
            head: state.head,
            provenance: vec![format!("train:{}", split.name)],
            config: config.clone(),
            label_map,
        },
        epoch_losses,
    })
}

/// Builds the fine-tuning start state without taking any gradient step:
/// the encoder is copied verbatim from the checkpoint, and the head is
/// replaced by a freshly initialized one only when the split's label
/// cardinality differs from the checkpoint head.
pub fn prepare_fine_tune(
    checkpoint: &ModelCheckpoint,
    split: &DatasetSplit,
    config: &ClassifierConfig,
) -> Result<ModelCheckpoint, ClassifierError> {
    config.validate()?;
    let label_map = split_label_map(split)?;
    if label_map.len() != config.num_labels {
        return Err(ClassifierError::LabelCardinality {
            expected: config.num_labels,
            found: label_map.len(),
        });
    }
    let head = if label_map.len() == checkpoint.head.num_labels() {
        checkpoint.head.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ HEAD_SEED_SALT);
        HeadParams::init(
            checkpoint.encoder.params.config.hidden_dim,
            label_map.len(),
            &mut rng,
        )
    };
    Ok(ModelCheckpoint {
        encoder: checkpoint.encoder.clone(),
        head,
        provenance: checkpoint.provenance.clone(),
        config: config.clone(),
        label_map,
    })
}

/// Sequential transfer fine-tuning: continues training from a checkpoint on
/// a new split, appending `finetune:<split name>` to the provenance.
pub fn sequential_fine_tune(
    checkpoint: &ModelCheckpoint,
    split: &DatasetSplit,
    config: &ClassifierConfig,
) -> Result<TrainRun, ClassifierError> {
    let prepared = prepare_fine_tune(checkpoint, split, config)?;
    let label_map = prepared.label_map.clone();
    let max_len = effective_max_len(config, &prepared.encoder.params);
    let features = encode_records(&prepared.encoder.vocab, &split.records, &label_map, max_len);
    let mut state = ModelState {
        encoder: prepared.encoder.params,
        head: prepared.head,
    };
    let epoch_losses = run_training(&mut state, &features, config);
    let mut provenance = checkpoint.provenance.clone();
    provenance.push(format!("finetune:{}", split.name));
    Ok(TrainRun {
        checkpoint: ModelCheckpoint {
            encoder: EncoderArtifact {
                vocab: prepared.encoder.vocab,
                params: state.encoder,
            },
            head: state.head,
            provenance,
            config: config.clone(),
            label_map,
        },
        epoch_losses,
    })
}

/// Predicts labels for the sentences. Binary tasks also get the
/// positive-class probability as `score`; the predicted label is
/// `score ≥ 0.5`.
pub fn predict(
    checkpoint: &ModelCheckpoint,
    sentences: &[LabeledSentence],
    dataset_id: &str,
) -> Result<PredictionSet, ClassifierError> {
    if sentences.is_empty() {
        return Ok(PredictionSet {
            model_id: checkpoint.model_id(),
            dataset_id: dataset_id.to_string(),
            entries: Vec::new(),
        });
    }
    let task = sentences[0].task;
    if sentences.iter().any(|s| s.task != task) {
        return Err(ClassifierError::MixedTasks);
    }
    if task.num_labels() != checkpoint.head.num_labels() {
        return Err(ClassifierError::HeadMismatch {
            expected: checkpoint.head.num_labels(),
            found: task.num_labels(),
        });
    }
    let label_map = &checkpoint.label_map;
    let max_len = effective_max_len(&checkpoint.config, &checkpoint.encoder.params);
    let features = encode_records(&checkpoint.encoder.vocab, sentences, label_map, max_len);
    let probs = forward_probs(
        &checkpoint.encoder.params,
        &checkpoint.head,
        &features,
        checkpoint.config.batch_size,
    );
    let binary = label_map.len() == 2;
    let entries = sentences
        .iter()
        .zip(&probs)
        .map(|(sentence, row)| {
            let (predicted, score) = if binary {
                let score = row[0];
                let label = if score >= 0.5 { label_map[0] } else { label_map[1] };
                (label, Some(score))
            } else {
                let argmax = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probs"))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                (label_map[argmax], None)
            };
            PredictionEntry {
                sentence_id: sentence.id.clone(),
                predicted: PredictionOutcome::Label(predicted),
                score,
            }
        })
        .collect();
    Ok(PredictionSet {
        model_id: checkpoint.model_id(),
        dataset_id: dataset_id.to_string(),
        entries,
    })
}

/// Stratified k-fold cross-validation. Folds are deterministic under the
/// config seed; each fold reports accuracy on its own training portion and
/// on the held-out fold.
pub fn kfold_cross_validate(
    config: &ClassifierConfig,
    split: &DatasetSplit,
    k: usize,
) -> Result<KFoldReport, ClassifierError> {
    config.validate()?;
    if k < 2 {
        return Err(ClassifierError::BadKfold("k must be at least 2".into()));
    }
    let label_map = split_label_map(split)?;
    if label_map.len() != config.num_labels {
        return Err(ClassifierError::LabelCardinality {
            expected: config.num_labels,
            found: label_map.len(),
        });
    }
    let mut by_label: HashMap<TaskLabel, Vec<usize>> = HashMap::new();
    for (i, rec) in split.records.iter().enumerate() {
        by_label.entry(rec.label).or_default().push(i);
    }
    let min_class = by_label.values().map(Vec::len).min().unwrap_or(0);
    if k > min_class {
        return Err(ClassifierError::BadKfold(format!(
            "k = {k} exceeds the smallest class count {min_class}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ KFOLD_SEED_SALT);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for label in &label_map {
        let mut pool = by_label.remove(label).unwrap_or_default();
        pool.shuffle(&mut rng);
        for (i, idx) in pool.into_iter().enumerate() {
            folds[i % k].push(idx);
        }
    }

    let texts: Vec<&str> = split.records.iter().map(|r| r.text.as_str()).collect();
    let artifact = resolve_encoder(&config.base_encoder_id, texts)?;
    let max_len = effective_max_len(config, &artifact.params);
    let all_features = encode_records(&artifact.vocab, &split.records, &label_map, max_len);

    let accuracy_on = |state: &ModelState, idxs: &[usize]| -> f64 {
        let subset: Vec<(Vec<usize>, usize)> =
            idxs.iter().map(|&i| all_features[i].clone()).collect();
        let probs = forward_probs(&state.encoder, &state.head, &subset, config.batch_size);
        let correct = subset
            .iter()
            .zip(&probs)
            .filter(|((_, label), row)| {
                let argmax = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probs"))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                argmax == *label
            })
            .count();
        correct as f64 / subset.len().max(1) as f64
    };

    let mut fold_train_accuracy = Vec::with_capacity(k);
    let mut fold_val_accuracy = Vec::with_capacity(k);
    for held_out in 0..k {
        let train_idx: Vec<usize> = (0..k)
            .filter(|f| *f != held_out)
            .flat_map(|f| folds[f].iter().copied())
            .collect();
        let features: Vec<(Vec<usize>, usize)> =
            train_idx.iter().map(|&i| all_features[i].clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ HEAD_SEED_SALT);
        let mut state = ModelState {
            encoder: artifact.params.clone(),
            head: HeadParams::init(
                artifact.params.config.hidden_dim,
                config.num_labels,
                &mut rng,
            ),
        };
        run_training(&mut state, &features, config);
        let train_indices: Vec<usize> = (0..features.len()).collect();
        let _ = train_indices;
        fold_train_accuracy.push(accuracy_on(
            &state,
            &train_idx,
        ));
        fold_val_accuracy.push(accuracy_on(&state, &folds[held_out]));
    }
    Ok(KFoldReport {
        fold_train_accuracy,
        fold_val_accuracy,
    })
}

/// Writes the per-epoch training log as `epoch,mean_loss` CSV.
pub fn write_training_log(path: &Path, losses: &[f64]) -> Result<(), ClassifierError> {
    let mut out = String::from("epoch,mean_loss\n");
    for (epoch, loss) in losses.iter().enumerate() {
        out.push_str(&format!("{},{loss}\n", epoch + 1));
    }
    std::fs::write(path, out).map_err(|e| ClassifierError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Lang, SplitName, Task};

    fn toy_encoder_id() -> String {
        "synth:hidden=16,layers=1,heads=2,ffn=32,max_len=16,vocab=300,seed=7".to_string()
    }

    fn toy_config(num_labels: usize, epochs: usize) -> ClassifierConfig {
        ClassifierConfig {
            base_encoder_id: toy_encoder_id(),
            num_labels,
            batch_size: 4,
            learning_rate: 5e-3,
            epochs,
            optimizer: OptimizerKind::AdamW,
            loss: LossKind::CrossEntropy,
            max_sequence_length: 16,
            seed: 11,
            freeze_encoder: false,
        }
    }

    fn sarcasm_split(n_per_class: usize, name: SplitName) -> DatasetSplit {
        let records: Vec<LabeledSentence> = (0..n_per_class)
            .flat_map(|i| {
                [
                    LabeledSentence::new(
                        format!("s{i}"),
                        format!("oh great just wonderful item {i}"),
                        Lang::English,
                        TaskLabel::Sarcastic,
                    )
                    .unwrap(),
                    LabeledSentence::new(
                        format!("n{i}"),
                        format!("council approves budget item {i}"),
                        Lang::English,
                        TaskLabel::NonSarcastic,
                    )
                    .unwrap(),
                ]
            })
            .collect();
        DatasetSplit::new(name, records).unwrap()
    }

    fn sentiment_split(n_per_class: usize) -> DatasetSplit {
        let mut records = Vec::new();
        for i in 0..n_per_class {
            for (prefix, text, label) in [
                ("p", "love this sunny day", TaskLabel::Positive),
                ("g", "terrible awful experience", TaskLabel::Negative),
                ("u", "the train arrives at nine", TaskLabel::Neutral),
            ] {
                records.push(
                    LabeledSentence::new(
                        format!("{prefix}{i}"),
                        format!("{text} {i}"),
                        Lang::English,
                        label,
                    )
                    .unwrap(),
                );
            }
        }
        DatasetSplit::new(SplitName::FineTuneEnglish, records).unwrap()
    }

    #[test]
    fn single_epoch_smoke_run() {
        let split = sarcasm_split(2, SplitName::Train);
        let run = train(&toy_config(2, 1), &split).unwrap();
        assert_eq!(run.epoch_losses.len(), 1);
        assert!(run.epoch_losses[0].is_finite());
        assert_eq!(run.checkpoint.provenance, vec!["train:train".to_string()]);
        assert_eq!(run.checkpoint.head_spec().num_labels, 2);
    }

    #[test]
    fn label_cardinality_mismatch_is_rejected() {
        let split = sentiment_split(2);
        match train(&toy_config(2, 1), &split).unwrap_err() {
            ClassifierError::LabelCardinality { expected, found } => {
                assert_eq!((expected, found), (2, 3));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn unresolvable_encoder_is_reported() {
        let mut config = toy_config(2, 1);
        config.base_encoder_id = "/nonexistent/encoder".into();
        let split = sarcasm_split(2, SplitName::Train);
        assert!(matches!(
            train(&config, &split).unwrap_err(),
            ClassifierError::EncoderUnresolvable { .. }
        ));
    }

    #[test]
    fn training_loss_does_not_increase_on_separable_data() {
        let split = sarcasm_split(8, SplitName::Train);
        let run = train(&toy_config(2, 8), &split).unwrap();
        let first = run.epoch_losses.first().copied().unwrap();
        let last = run.epoch_losses.last().copied().unwrap();
        assert!(
            last <= first,
            "loss went up: first {first}, last {last}"
        );
    }

    #[test]
    fn training_is_bit_reproducible() {
        let split = sarcasm_split(4, SplitName::Train);
        let config = toy_config(2, 2);
        let a = train(&config, &split).unwrap();
        let b = train(&config, &split).unwrap();
        assert!(a.checkpoint.encoder.params.bitwise_eq(&b.checkpoint.encoder.params));
        assert!(a.checkpoint.head.bitwise_eq(&b.checkpoint.head));
        let probe = sarcasm_split(3, SplitName::Test);
        let pa = predict(&a.checkpoint, &probe.records, "probe").unwrap();
        let pb = predict(&b.checkpoint, &probe.records, "probe").unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn head_is_replaced_only_on_cardinality_change() {
        let split = sarcasm_split(3, SplitName::Train);
        let run = train(&toy_config(2, 1), &split).unwrap();

        // 2 -> 3 labels: fresh head, encoder untouched
        let sentiment = sentiment_split(2);
        let prepared = prepare_fine_tune(&run.checkpoint, &sentiment, &toy_config(3, 1)).unwrap();
        assert!(prepared.encoder.params.bitwise_eq(&run.checkpoint.encoder.params));
        assert_eq!(prepared.head.num_labels(), 3);
        assert_eq!(prepared.label_map.len(), 3);
        assert_eq!(prepared.label_map[0], TaskLabel::Positive);

        // 2 -> 2 labels: head retained verbatim
        let finetune = sarcasm_split(2, SplitName::FineTuneHinglish);
        let retained = prepare_fine_tune(&run.checkpoint, &finetune, &toy_config(2, 1)).unwrap();
        assert!(retained.head.bitwise_eq(&run.checkpoint.head));
        assert!(retained.encoder.params.bitwise_eq(&run.checkpoint.encoder.params));
    }

    #[test]
    fn provenance_grows_by_one_per_stage() {
        let split = sarcasm_split(3, SplitName::Train);
        let run = train(&toy_config(2, 1), &split).unwrap();
        let ft1 = sequential_fine_tune(
            &run.checkpoint,
            &sarcasm_split(2, SplitName::FineTuneEnglish),
            &toy_config(2, 1),
        )
        .unwrap();
        let ft2 = sequential_fine_tune(
            &ft1.checkpoint,
            &sarcasm_split(2, SplitName::FineTuneHinglish),
            &toy_config(2, 1),
        )
        .unwrap();
        assert_eq!(
            ft2.checkpoint.provenance,
            vec![
                "train:train".to_string(),
                "finetune:finetune_english".to_string(),
                "finetune:finetune_hinglish".to_string(),
            ]
        );
    }

    #[test]
    fn fine_tune_on_empty_split_is_rejected() {
        let run = train(&toy_config(2, 1), &sarcasm_split(2, SplitName::Train)).unwrap();
        let empty = DatasetSplit::new(SplitName::FineTuneEnglish, Vec::new()).unwrap();
        assert!(matches!(
            sequential_fine_tune(&run.checkpoint, &empty, &toy_config(2, 1)).unwrap_err(),
            ClassifierError::EmptySplit
        ));
    }

    #[test]
    fn predictions_are_deterministic_and_thresholded() {
        let run = train(&toy_config(2, 2), &sarcasm_split(4, SplitName::Train)).unwrap();
        let probe = sarcasm_split(5, SplitName::Test);
        let a = predict(&run.checkpoint, &probe.records, "test").unwrap();
        let b = predict(&run.checkpoint, &probe.records, "test").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), probe.len());
        for entry in &a.entries {
            let score = entry.score.expect("binary predictions carry scores");
            assert!((0.0..=1.0).contains(&score));
            let expected = if score >= 0.5 {
                TaskLabel::Sarcastic
            } else {
                TaskLabel::NonSarcastic
            };
            assert_eq!(entry.predicted, PredictionOutcome::Label(expected));
        }
    }

    #[test]
    fn predict_empty_input_yields_empty_entries() {
        let run = train(&toy_config(2, 1), &sarcasm_split(2, SplitName::Train)).unwrap();
        let preds = predict(&run.checkpoint, &[], "empty").unwrap();
        assert!(preds.is_empty());
    }

    #[test]
    fn predict_rejects_task_with_wrong_cardinality() {
        let run = train(&toy_config(2, 1), &sarcasm_split(2, SplitName::Train)).unwrap();
        let sentiment = sentiment_split(1);
        assert!(matches!(
            predict(&run.checkpoint, &sentiment.records, "x").unwrap_err(),
            ClassifierError::HeadMismatch { .. }
        ));
    }

    #[test]
    fn sentiment_head_produces_labels_without_scores() {
        let split = sentiment_split(3);
        let run = train(&toy_config(3, 1), &split).unwrap();
        let preds = predict(&run.checkpoint, &split.records, "sentiment").unwrap();
        assert!(preds.entries.iter().all(|e| e.score.is_none()));
        assert!(preds
            .entries
            .iter()
            .all(|e| matches!(e.predicted, PredictionOutcome::Label(l) if l.task() == Task::Sentiment)));
    }

    #[test]
    fn kfold_folds_are_deterministic_and_bounded() {
        let split = sarcasm_split(6, SplitName::Train);
        let config = toy_config(2, 1);
        let a = kfold_cross_validate(&config, &split, 2).unwrap();
        let b = kfold_cross_validate(&config, &split, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fold_val_accuracy.len(), 2);
        for acc in a.fold_train_accuracy.iter().chain(&a.fold_val_accuracy) {
            assert!((0.0..=1.0).contains(acc));
        }
    }

    #[test]
    fn kfold_rejects_oversized_k() {
        let split = sarcasm_split(3, SplitName::Train);
        assert!(matches!(
            kfold_cross_validate(&toy_config(2, 1), &split, 4).unwrap_err(),
            ClassifierError::BadKfold(_)
        ));
        assert!(matches!(
            kfold_cross_validate(&toy_config(2, 1), &split, 1).unwrap_err(),
            ClassifierError::BadKfold(_)
        ));
    }

    #[test]
    fn checkpoint_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let run = train(&toy_config(2, 1), &sarcasm_split(3, SplitName::Train)).unwrap();
        let path = dir.path().join("checkpoint");
        run.checkpoint.save(&path).unwrap();
        let reloaded = ModelCheckpoint::load(&path).unwrap();
        assert!(reloaded.encoder.params.bitwise_eq(&run.checkpoint.encoder.params));
        assert!(reloaded.head.bitwise_eq(&run.checkpoint.head));
        assert_eq!(reloaded.provenance, run.checkpoint.provenance);
        assert_eq!(reloaded.label_map, run.checkpoint.label_map);
        let probe = sarcasm_split(2, SplitName::Test);
        assert_eq!(
            predict(&reloaded, &probe.records, "probe").unwrap(),
            predict(&run.checkpoint, &probe.records, "probe").unwrap()
        );
    }

    #[test]
    fn synth_references_resolve_deterministically() {
        let texts = ["some words here", "and more words"];
        let a = resolve_encoder(&toy_encoder_id(), texts).unwrap();
        let b = resolve_encoder(&toy_encoder_id(), texts).unwrap();
        assert!(a.params.bitwise_eq(&b.params));
        assert_eq!(a.vocab, b.vocab);
    }

    #[test]
    fn frozen_encoder_stays_bitwise_identical_through_training() {
        let split = sarcasm_split(3, SplitName::Train);
        let mut config = toy_config(2, 2);
        config.freeze_encoder = true;
        let texts: Vec<&str> = split.records.iter().map(|r| r.text.as_str()).collect();
        let initial = resolve_encoder(&config.base_encoder_id, texts).unwrap();
        let run = train(&config, &split).unwrap();
        assert!(run.checkpoint.encoder.params.bitwise_eq(&initial.params));
    }
}
