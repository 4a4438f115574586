//! Zero/few-shot sarcasm classification through an external LLM endpoint:
//! prompt rendering, response parsing, and a persistent response cache.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::LazyLock;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classifier::{PredictionEntry, PredictionOutcome, PredictionSet};
use crate::corpus::{DatasetSplit, Task, TaskLabel};
use crate::http::TransportError;

/// Instruction used for every sarcasm classification request. The
/// `{sentence}` placeholder is substituted per input.
pub const CLASSIFY_PROMPT_BODY: &str = "You are a sarcasm detection model. You have to detect sarcasm in Hinglish sentences.\nSentence: \"{sentence}\"\nDon't give any explanation and Respond ONLY with one label:\n- Sarcastic\n- Non-Sarcastic";

const PLACEHOLDER: &str = "{sentence}";

/// Prompting mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    ZeroShot,
    FewShot,
}

impl PromptMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PromptMode::ZeroShot => "zero_shot",
            PromptMode::FewShot => "few_shot",
        }
    }
}

/// Prompt body plus optional labeled exemplars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub mode: PromptMode,
    pub body: String,
    pub exemplars: Vec<(String, TaskLabel)>,
}

impl PromptTemplate {
    pub fn zero_shot() -> Self {
        PromptTemplate::new(PromptMode::ZeroShot, CLASSIFY_PROMPT_BODY, Vec::new())
            .expect("default template is valid")
    }

    pub fn few_shot(exemplars: Vec<(String, TaskLabel)>) -> Result<Self, LlmEvalError> {
        PromptTemplate::new(PromptMode::FewShot, CLASSIFY_PROMPT_BODY, exemplars)
    }

    /// Validates the placeholder count and, for few-shot templates, that the
    /// exemplars are non-empty and class-balanced.
    pub fn new(
        mode: PromptMode,
        body: impl Into<String>,
        exemplars: Vec<(String, TaskLabel)>,
    ) -> Result<Self, LlmEvalError> {
        let body = body.into();
        if body.matches(PLACEHOLDER).count() != 1 {
            return Err(LlmEvalError::InvalidTemplate(format!(
                "body must contain exactly one `{PLACEHOLDER}` placeholder"
            )));
        }
        match mode {
            PromptMode::ZeroShot => {
                if !exemplars.is_empty() {
                    return Err(LlmEvalError::InvalidTemplate(
                        "zero-shot templates carry no exemplars".into(),
                    ));
                }
            }
            PromptMode::FewShot => {
                if exemplars.is_empty() {
                    return Err(LlmEvalError::InvalidTemplate(
                        "few-shot templates need exemplars".into(),
                    ));
                }
                let mut counts: HashMap<TaskLabel, usize> = HashMap::new();
                for (_, label) in &exemplars {
                    *counts.entry(*label).or_insert(0) += 1;
                }
                let mut values = counts.values();
                let first = *values.next().expect("non-empty");
                if counts.len() < 2 || values.any(|v| *v != first) {
                    return Err(LlmEvalError::InvalidTemplate(
                        "few-shot exemplars must be class-balanced".into(),
                    ));
                }
            }
        }
        Ok(PromptTemplate {
            mode,
            body,
            exemplars,
        })
    }
}

fn prompt_label_name(label: TaskLabel) -> &'static str {
    match label {
        TaskLabel::Sarcastic => "Sarcastic",
        TaskLabel::NonSarcastic => "Non-Sarcastic",
        TaskLabel::Positive => "Positive",
        TaskLabel::Negative => "Negative",
        TaskLabel::Neutral => "Neutral",
    }
}

/// Substitutes the placeholder with the sentence text. The sentence is
/// inserted verbatim, so placeholder-like text inside it is never
/// re-substituted. Few-shot exemplars are inserted as `Example:` lines
/// directly above the line holding the placeholder, in template order.
pub fn render_prompt(template: &PromptTemplate, sentence: &str) -> String {
    let mut body = template.body.clone();
    if template.mode == PromptMode::FewShot {
        let insert_at = body
            .find(PLACEHOLDER)
            .map(|pos| body[..pos].rfind('\n').map_or(0, |nl| nl + 1))
            .unwrap_or(0);
        let block: String = template
            .exemplars
            .iter()
            .map(|(text, label)| format!("Example: {text} → {}\n", prompt_label_name(*label)))
            .collect();
        body.insert_str(insert_at, &block);
    }
    body.replacen(PLACEHOLDER, sentence, 1)
}

/// Parse outcome of one raw LLM response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsedLabel {
    Sarcastic,
    NonSarcastic,
    Unparseable,
}

static NON_SARCASTIC_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\bnon[\s\-–—_]*sarcastic\b").expect("valid pattern")
});
static SARCASTIC_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\bsarcastic\b").expect("valid pattern"));

/// Maps a raw response to a label. Total: never fails, and a string that
/// matches the non-sarcastic lexicon is never read as sarcastic. Responses
/// naming both labels, or neither, are unparseable.
pub fn parse_label(raw: &str) -> ParsedLabel {
    let lower = raw.to_lowercase();
    let has_non = NON_SARCASTIC_RE.is_match(&lower);
    let stripped = NON_SARCASTIC_RE.replace_all(&lower, " ");
    let has_sarcastic = SARCASTIC_RE.is_match(&stripped);
    match (has_non, has_sarcastic) {
        (true, false) => ParsedLabel::NonSarcastic,
        (false, true) => ParsedLabel::Sarcastic,
        _ => ParsedLabel::Unparseable,
    }
}

impl ParsedLabel {
    fn outcome(self) -> PredictionOutcome {
        match self {
            ParsedLabel::Sarcastic => PredictionOutcome::Label(TaskLabel::Sarcastic),
            ParsedLabel::NonSarcastic => PredictionOutcome::Label(TaskLabel::NonSarcastic),
            ParsedLabel::Unparseable => PredictionOutcome::Unparseable,
        }
    }
}

/// Abstraction over the completion endpoint so runs can be replayed against
/// scripted responders.
pub trait InferenceClient: Send + Sync {
    fn complete(&self, model_id: &str, prompt: &str) -> Result<String, TransportError>;
}

/// One raw model response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawLLMResponse {
    pub model_id: String,
    pub sentence_id: String,
    pub text: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheRecord {
    #[serde(flatten)]
    response: RawLLMResponse,
    prompt_sha256: String,
}

fn prompt_hash(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Append-only response cache keyed by (model, rendered-prompt hash,
/// sentence id). The newest record wins on reload.
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: Mutex<HashMap<(String, String, String), String>>,
}

impl ResponseCache {
    /// In-memory cache that persists nothing.
    pub fn ephemeral() -> Self {
        ResponseCache {
            path: None,
            entries: Mutex::new(HashMap::new()),
        }
    }

    pub fn open(path: &Path) -> Result<Self, LlmEvalError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let file = std::fs::File::open(path).map_err(|e| LlmEvalError::Cache {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| LlmEvalError::Cache {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: CacheRecord =
                    serde_json::from_str(&line).map_err(|e| LlmEvalError::Cache {
                        path: path.display().to_string(),
                        message: format!("line {}: {e}", idx + 1),
                    })?;
                entries.insert(
                    (
                        record.response.model_id,
                        record.prompt_sha256,
                        record.response.sentence_id,
                    ),
                    record.response.text,
                );
            }
        }
        Ok(ResponseCache {
            path: Some(path.to_path_buf()),
            entries: Mutex::new(entries),
        })
    }

    fn get(&self, model_id: &str, hash: &str, sentence_id: &str) -> Option<String> {
        self.entries
            .lock()
            .expect("cache lock")
            .get(&(model_id.to_string(), hash.to_string(), sentence_id.to_string()))
            .cloned()
    }

    fn put(&self, record: &RawLLMResponse, hash: &str) -> Result<(), LlmEvalError> {
        if let Some(path) = &self.path {
            let line = serde_json::to_string(&CacheRecord {
                response: record.clone(),
                prompt_sha256: hash.to_string(),
            })
            .expect("cache record serialization");
            let mut file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| LlmEvalError::Cache {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
            writeln!(file, "{line}").map_err(|e| LlmEvalError::Cache {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        }
        self.entries.lock().expect("cache lock").insert(
            (
                record.model_id.clone(),
                hash.to_string(),
                record.sentence_id.clone(),
            ),
            record.text.clone(),
        );
        Ok(())
    }
}

/// Retry limits and parallelism for a classification run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Additional attempts after a transport failure.
    pub max_transport_retries: usize,
    /// Additional attempts after an unparseable response.
    pub max_parse_retries: usize,
    /// In-flight requests; 1 reproduces strict sequential calls.
    pub parallelism: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            max_transport_retries: 2,
            max_parse_retries: 1,
            parallelism: 1,
        }
    }
}

/// Outcome counts for one classification run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub ok: usize,
    pub unparseable: usize,
    pub error: usize,
}

#[derive(Debug, Error)]
pub enum LlmEvalError {
    #[error("invalid prompt template: {0}")]
    InvalidTemplate(String),
    #[error("dataset is not a sarcasm split")]
    WrongTask,
    #[error("exemplar pool overlaps the test split: {}", .0.join(", "))]
    PoolOverlapsTest(Vec<String>),
    #[error("exemplar pool has {have} `{label}` records, need {needed}")]
    InsufficientPool {
        label: TaskLabel,
        needed: usize,
        have: usize,
    },
    #[error("parallelism must be at least 1")]
    NoParallelism,
    #[error("response cache {path}: {message}")]
    Cache { path: String, message: String },
}

/// Classifies every sentence of the split, one request per sentence, in
/// dataset order. Cached responses are reused without issuing calls.
/// Transport failures become `Error` entries after retries; the run never
/// aborts mid-dataset.
pub fn classify_dataset(
    client: &dyn InferenceClient,
    model_id: &str,
    template: &PromptTemplate,
    split: &DatasetSplit,
    cache: &ResponseCache,
    opts: &EvalOptions,
) -> Result<(PredictionSet, RunReport), LlmEvalError> {
    if split.task().is_some_and(|t| t != Task::Sarcasm) {
        return Err(LlmEvalError::WrongTask);
    }
    if opts.parallelism == 0 {
        return Err(LlmEvalError::NoParallelism);
    }

    struct Job {
        index: usize,
        sentence_id: String,
        prompt: String,
        hash: String,
    }
    let jobs: Vec<Job> = split
        .records
        .iter()
        .enumerate()
        .map(|(index, rec)| {
            let prompt = render_prompt(template, &rec.text);
            let hash = prompt_hash(&prompt);
            Job {
                index,
                sentence_id: rec.id.clone(),
                prompt,
                hash,
            }
        })
        .collect();

    let run_job = |job: &Job| -> Result<PredictionOutcome, LlmEvalError> {
        if let Some(text) = cache.get(model_id, &job.hash, &job.sentence_id) {
            return Ok(parse_label(&text).outcome());
        }
        let mut parse_attempts = 0;
        loop {
            let mut transport_attempts = 0;
            let text = loop {
                let started = std::time::Instant::now();
                match client.complete(model_id, &job.prompt) {
                    Ok(text) => {
                        let latency_ms = started.elapsed().as_millis() as u64;
                        cache.put(
                            &RawLLMResponse {
                                model_id: model_id.to_string(),
                                sentence_id: job.sentence_id.clone(),
                                text: text.clone(),
                                latency_ms,
                            },
                            &job.hash,
                        )?;
                        break Some(text);
                    }
                    Err(err) => {
                        transport_attempts += 1;
                        if transport_attempts > opts.max_transport_retries {
                            log::warn!(
                                "{}: transport failure after {transport_attempts} attempts: {err}",
                                job.sentence_id
                            );
                            break None;
                        }
                    }
                }
            };
            let Some(text) = text else {
                return Ok(PredictionOutcome::Error);
            };
            match parse_label(&text) {
                ParsedLabel::Unparseable if parse_attempts < opts.max_parse_retries => {
                    parse_attempts += 1;
                }
                parsed => return Ok(parsed.outcome()),
            }
        }
    };

    let mut outcomes: Vec<Option<PredictionOutcome>> = vec![None; jobs.len()];
    if opts.parallelism == 1 {
        for job in &jobs {
            outcomes[job.index] = Some(run_job(job)?);
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<PredictionOutcome, LlmEvalError>>>> =
            jobs.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..opts.parallelism.min(jobs.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= jobs.len() {
                        break;
                    }
                    *slots[i].lock().expect("slot lock") = Some(run_job(&jobs[i]));
                });
            }
        });
        for (i, slot) in slots.into_iter().enumerate() {
            let result = slot.into_inner().expect("slot lock").expect("job ran");
            outcomes[jobs[i].index] = Some(result?);
        }
    }

    let mut report = RunReport::default();
    let entries: Vec<PredictionEntry> = jobs
        .iter()
        .map(|job| {
            let outcome = outcomes[job.index].expect("job completed");
            match outcome {
                PredictionOutcome::Label(_) => report.ok += 1,
                PredictionOutcome::Unparseable => report.unparseable += 1,
                PredictionOutcome::Error => report.error += 1,
            }
            PredictionEntry {
                sentence_id: job.sentence_id.clone(),
                predicted: outcome,
                score: None,
            }
        })
        .collect();

    Ok((
        PredictionSet {
            model_id: model_id.to_string(),
            dataset_id: split.name.as_str().to_string(),
            entries,
        },
        report,
    ))
}

/// Draws a deterministic, class-balanced exemplar sample from a pool that
/// must not overlap the test set.
pub fn build_fewshot_exemplars(
    pool: &DatasetSplit,
    test_ids: &HashSet<String>,
    k_per_class: usize,
    seed: u64,
) -> Result<Vec<(String, TaskLabel)>, LlmEvalError> {
    let overlap: Vec<String> = pool
        .records
        .iter()
        .filter(|r| test_ids.contains(&r.id))
        .map(|r| r.id.clone())
        .collect();
    if !overlap.is_empty() {
        return Err(LlmEvalError::PoolOverlapsTest(overlap));
    }
    let task = pool.task().ok_or(LlmEvalError::WrongTask)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_label: Vec<Vec<&str>> = Vec::new();
    for label in task.labels() {
        let mut candidates: Vec<&str> = pool
            .records
            .iter()
            .filter(|r| r.label == *label)
            .map(|r| r.text.as_str())
            .collect();
        if candidates.len() < k_per_class {
            return Err(LlmEvalError::InsufficientPool {
                label: *label,
                needed: k_per_class,
                have: candidates.len(),
            });
        }
        candidates.shuffle(&mut rng);
        candidates.truncate(k_per_class);
        per_label.push(candidates);
    }
    // interleave labels so truncated prompts stay balanced
    let mut exemplars = Vec::with_capacity(k_per_class * task.num_labels());
    for i in 0..k_per_class {
        for (label, texts) in task.labels().iter().zip(&per_label) {
            exemplars.push((texts[i].to_string(), *label));
        }
    }
    Ok(exemplars)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabeledSentence, Lang, SplitName};
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn sarcasm_split(n_per_class: usize) -> DatasetSplit {
        let records: Vec<_> = (0..n_per_class)
            .flat_map(|i| {
                [
                    LabeledSentence::new(
                        format!("s{i}"),
                        format!("sarcastic text {i}"),
                        Lang::Hinglish,
                        TaskLabel::Sarcastic,
                    )
                    .unwrap(),
                    LabeledSentence::new(
                        format!("n{i}"),
                        format!("plain text {i}"),
                        Lang::Hinglish,
                        TaskLabel::NonSarcastic,
                    )
                    .unwrap(),
                ]
            })
            .collect();
        DatasetSplit::new(SplitName::Test, records).unwrap()
    }

    struct FixedClient(&'static str);

    impl InferenceClient for FixedClient {
        fn complete(&self, _model: &str, _prompt: &str) -> Result<String, TransportError> {
            Ok(self.0.to_string())
        }
    }

    struct CountingClient {
        calls: AtomicUsize,
        reply: &'static str,
    }

    impl InferenceClient for CountingClient {
        fn complete(&self, _model: &str, _prompt: &str) -> Result<String, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(self.reply.to_string())
        }
    }

    struct FailingClient;

    impl InferenceClient for FailingClient {
        fn complete(&self, _model: &str, _prompt: &str) -> Result<String, TransportError> {
            Err(TransportError::Network("connection refused".into()))
        }
    }

    #[test]
    fn zero_shot_prompt_substitutes_sentence() {
        let template = PromptTemplate::zero_shot();
        let rendered = render_prompt(&template, "abc");
        assert!(rendered.contains("Sentence: \"abc\""));
        assert!(rendered.starts_with("You are a sarcasm detection model."));
        assert!(rendered.ends_with("- Non-Sarcastic"));
        assert!(!rendered.contains(PLACEHOLDER));
    }

    #[test]
    fn few_shot_prompt_inserts_examples_before_sentence() {
        let exemplars = vec![
            ("haan bilkul".to_string(), TaskLabel::Sarcastic),
            ("office closed".to_string(), TaskLabel::NonSarcastic),
            ("great job yaar".to_string(), TaskLabel::Sarcastic),
            ("rain expected".to_string(), TaskLabel::NonSarcastic),
        ];
        let template = PromptTemplate::few_shot(exemplars).unwrap();
        let rendered = render_prompt(&template, "kya baat hai");
        assert_eq!(rendered.matches("Example: ").count(), 4);
        let example_pos = rendered.find("Example: ").unwrap();
        let sentence_pos = rendered.find("Sentence: \"kya baat hai\"").unwrap();
        assert!(example_pos < sentence_pos);
        assert!(rendered.contains("Example: haan bilkul → Sarcastic"));
        assert!(rendered.contains("Example: office closed → Non-Sarcastic"));
    }

    #[test]
    fn placeholder_in_sentence_is_not_resubstituted() {
        let template = PromptTemplate::zero_shot();
        let rendered = render_prompt(&template, "{sentence}");
        assert_eq!(rendered.matches(PLACEHOLDER).count(), 1);
        assert!(rendered.contains("Sentence: \"{sentence}\""));
    }

    #[test]
    fn template_validation_rejects_bad_shapes() {
        assert!(PromptTemplate::new(PromptMode::ZeroShot, "no placeholder", vec![]).is_err());
        assert!(PromptTemplate::new(
            PromptMode::ZeroShot,
            "{sentence} and {sentence}",
            vec![]
        )
        .is_err());
        assert!(PromptTemplate::few_shot(vec![]).is_err());
        assert!(PromptTemplate::few_shot(vec![
            ("a".into(), TaskLabel::Sarcastic),
            ("b".into(), TaskLabel::Sarcastic),
        ])
        .is_err());
    }

    #[test]
    fn parse_label_basic_cases() {
        assert_eq!(parse_label("Sarcastic"), ParsedLabel::Sarcastic);
        assert_eq!(parse_label("  non-Sarcastic."), ParsedLabel::NonSarcastic);
        assert_eq!(parse_label("- Non Sarcastic"), ParsedLabel::NonSarcastic);
        assert_eq!(parse_label("NONSARCASTIC"), ParsedLabel::NonSarcastic);
        assert_eq!(
            parse_label("It could be Sarcastic or Non-Sarcastic"),
            ParsedLabel::Unparseable
        );
        assert_eq!(parse_label("no label here"), ParsedLabel::Unparseable);
        assert_eq!(parse_label(""), ParsedLabel::Unparseable);
        assert_eq!(parse_label("The label is SARCASTIC!"), ParsedLabel::Sarcastic);
    }

    #[test]
    fn classify_dataset_covers_every_sentence() {
        let split = sarcasm_split(5);
        let client = FixedClient("Sarcastic");
        let cache = ResponseCache::ephemeral();
        let (preds, report) = classify_dataset(
            &client,
            "mock",
            &PromptTemplate::zero_shot(),
            &split,
            &cache,
            &EvalOptions::default(),
        )
        .unwrap();
        assert_eq!(preds.len(), split.len());
        assert_eq!(report.ok, 10);
        assert!(preds
            .entries
            .iter()
            .all(|e| e.predicted == PredictionOutcome::Label(TaskLabel::Sarcastic)));
        // entry order follows dataset order
        let ids: Vec<_> = preds.entries.iter().map(|e| e.sentence_id.as_str()).collect();
        assert_eq!(ids, split.ids());
    }

    #[test]
    fn warm_cache_issues_zero_calls() {
        let dir = tempfile::tempdir().unwrap();
        let cache_path = dir.path().join("cache.jsonl");
        let split = sarcasm_split(4);
        let template = PromptTemplate::zero_shot();
        let client = CountingClient {
            calls: AtomicUsize::new(0),
            reply: "Non-Sarcastic",
        };
        let cache = ResponseCache::open(&cache_path).unwrap();
        let (first, _) =
            classify_dataset(&client, "m", &template, &split, &cache, &EvalOptions::default())
                .unwrap();
        assert_eq!(client.calls.load(Ordering::SeqCst), 8);

        let cache = ResponseCache::open(&cache_path).unwrap();
        let (second, _) =
            classify_dataset(&client, "m", &template, &split, &cache, &EvalOptions::default())
                .unwrap();
        assert_eq!(client.calls.load(Ordering::SeqCst), 8);
        assert_eq!(first, second);
    }

    #[test]
    fn changing_template_invalidates_cache_hits() {
        let dir = tempfile::tempdir().unwrap();
        let cache_path = dir.path().join("cache.jsonl");
        let split = sarcasm_split(2);
        let client = CountingClient {
            calls: AtomicUsize::new(0),
            reply: "Sarcastic",
        };
        let cache = ResponseCache::open(&cache_path).unwrap();
        let zero = PromptTemplate::zero_shot();
        classify_dataset(&client, "m", &zero, &split, &cache, &EvalOptions::default()).unwrap();
        assert_eq!(client.calls.load(Ordering::SeqCst), 4);
        let few = PromptTemplate::few_shot(vec![
            ("x".into(), TaskLabel::Sarcastic),
            ("y".into(), TaskLabel::NonSarcastic),
        ])
        .unwrap();
        classify_dataset(&client, "m", &few, &split, &cache, &EvalOptions::default()).unwrap();
        assert_eq!(client.calls.load(Ordering::SeqCst), 8);
    }

    #[test]
    fn transport_failures_become_error_entries() {
        let split = sarcasm_split(3);
        let cache = ResponseCache::ephemeral();
        let (preds, report) = classify_dataset(
            &FailingClient,
            "m",
            &PromptTemplate::zero_shot(),
            &split,
            &cache,
            &EvalOptions::default(),
        )
        .unwrap();
        assert_eq!(preds.len(), 6);
        assert_eq!(report.error, 6);
        assert!(preds
            .entries
            .iter()
            .all(|e| e.predicted == PredictionOutcome::Error));
    }

    #[test]
    fn unparseable_responses_are_counted() {
        let split = sarcasm_split(2);
        let cache = ResponseCache::ephemeral();
        let (preds, report) = classify_dataset(
            &FixedClient("beats me"),
            "m",
            &PromptTemplate::zero_shot(),
            &split,
            &cache,
            &EvalOptions::default(),
        )
        .unwrap();
        assert_eq!(report.unparseable, 4);
        assert!(preds
            .entries
            .iter()
            .all(|e| e.predicted == PredictionOutcome::Unparseable));
    }

    #[test]
    fn parallel_runs_preserve_dataset_order() {
        let split = sarcasm_split(13);
        let cache = ResponseCache::ephemeral();
        let opts = EvalOptions {
            parallelism: 4,
            ..EvalOptions::default()
        };
        let (preds, _) = classify_dataset(
            &FixedClient("Sarcastic"),
            "m",
            &PromptTemplate::zero_shot(),
            &split,
            &cache,
            &opts,
        )
        .unwrap();
        let ids: Vec<_> = preds.entries.iter().map(|e| e.sentence_id.as_str()).collect();
        assert_eq!(ids, split.ids());
    }

    #[test]
    fn fewshot_exemplars_are_balanced_and_deterministic() {
        let pool = sarcasm_split(6);
        let test_ids: HashSet<String> = HashSet::new();
        let a = build_fewshot_exemplars(&pool, &test_ids, 2, 7).unwrap();
        let b = build_fewshot_exemplars(&pool, &test_ids, 2, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        let sarcastic = a.iter().filter(|(_, l)| *l == TaskLabel::Sarcastic).count();
        assert_eq!(sarcastic, 2);
    }

    #[test]
    fn fewshot_pool_overlap_is_rejected() {
        let pool = sarcasm_split(3);
        let test_ids: HashSet<String> = ["s1".to_string()].into_iter().collect();
        assert!(matches!(
            build_fewshot_exemplars(&pool, &test_ids, 1, 0).unwrap_err(),
            LlmEvalError::PoolOverlapsTest(ids) if ids == vec!["s1".to_string()]
        ));
    }

    #[test]
    fn fewshot_insufficient_pool_is_rejected() {
        let pool = sarcasm_split(1);
        let test_ids = HashSet::new();
        assert!(matches!(
            build_fewshot_exemplars(&pool, &test_ids, 2, 0).unwrap_err(),
            LlmEvalError::InsufficientPool { .. }
        ));
    }

    proptest! {
        #[test]
        fn parse_label_is_total(raw in "\\PC*") {
            let _ = parse_label(&raw);
        }

        #[test]
        fn non_sarcastic_variants_never_read_as_sarcastic(
            sep in prop_oneof![Just(""), Just(" "), Just("-"), Just("  ")],
            prefix in prop_oneof![Just(""), Just("- "), Just("* "), Just("answer: ")],
            suffix in prop_oneof![Just(""), Just("."), Just("!"), Just("!!")],
            upper in any::<bool>(),
        ) {
            let core = format!("non{sep}sarcastic");
            let core = if upper { core.to_uppercase() } else { core };
            let raw = format!("{prefix}{core}{suffix}");
            prop_assert_eq!(parse_label(&raw), ParsedLabel::NonSarcastic);
        }
    }
}
