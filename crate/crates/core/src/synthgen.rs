//! Code-mixed counterpart generation: batched translation prompts against an
//! external LLM, refusal handling with manual fallback, a persistent record
//! store, and the dual-annotator quality audit.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::LazyLock;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::script_profile;
use crate::http::TransportError;

/// Instruction prefixed to every translation batch. Batch sentences follow
/// as a numbered list.
pub const TRANSLATION_PROMPT_HEADER: &str = "Translate the following sentences into Hindi-English code-mixed sentences. Use Hindi/Devanagari script for words written using Devanagari font, if any, in the original text. Example: 'Weekend plans got cancelled.' → 'Weekend plans cancel हो गए'";

/// Lifecycle of one translation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslationStatus {
    Ok,
    Refused,
    Error,
    Manual,
}

/// Annotator verdict on one translation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditVerdict {
    Satisfactory,
    Unsatisfactory,
}

impl AuditVerdict {
    pub fn parse(value: &str) -> Option<Self> {
        match value.trim().to_ascii_lowercase().as_str() {
            "satisfactory" => Some(AuditVerdict::Satisfactory),
            "unsatisfactory" | "un-satisfactory" => Some(AuditVerdict::Unsatisfactory),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            AuditVerdict::Satisfactory => "satisfactory",
            AuditVerdict::Unsatisfactory => "unsatisfactory",
        }
    }
}

/// Both annotator verdicts plus the adjudicated consensus. The annotator
/// fields are never overwritten by adjudication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub annotator_a: AuditVerdict,
    pub annotator_b: AuditVerdict,
    pub adjudicated: AuditVerdict,
}

/// Source/translation pair with its status and optional audit annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationRecord {
    pub source_id: String,
    pub source_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translated_text: Option<String>,
    pub status: TranslationStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditEntry>,
}

impl TranslationRecord {
    pub fn ok(source_id: impl Into<String>, source_text: impl Into<String>, text: impl Into<String>) -> Self {
        TranslationRecord {
            source_id: source_id.into(),
            source_text: source_text.into(),
            translated_text: Some(text.into()),
            status: TranslationStatus::Ok,
            audit: None,
        }
    }

    pub fn refused(source_id: impl Into<String>, source_text: impl Into<String>) -> Self {
        TranslationRecord {
            source_id: source_id.into(),
            source_text: source_text.into(),
            translated_text: None,
            status: TranslationStatus::Refused,
            audit: None,
        }
    }

    pub fn errored(source_id: impl Into<String>, source_text: impl Into<String>) -> Self {
        TranslationRecord {
            source_id: source_id.into(),
            source_text: source_text.into(),
            translated_text: None,
            status: TranslationStatus::Error,
            audit: None,
        }
    }

    /// Status/text consistency check applied when reloading stored records.
    pub fn validate(&self) -> Result<(), SynthgenError> {
        let has_text = self
            .translated_text
            .as_ref()
            .is_some_and(|t| !t.trim().is_empty());
        let consistent = match self.status {
            TranslationStatus::Ok | TranslationStatus::Manual => has_text,
            TranslationStatus::Refused | TranslationStatus::Error => {
                self.translated_text.is_none()
            }
        };
        if consistent {
            Ok(())
        } else {
            Err(SynthgenError::InconsistentRecord {
                id: self.source_id.clone(),
            })
        }
    }
}

/// One batch of sentences to translate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationBatchRequest {
    pub sentences: Vec<(String, String)>,
    pub prompt_header: String,
    pub batch_size: usize,
}

impl TranslationBatchRequest {
    pub fn new(sentences: Vec<(String, String)>, batch_size: usize) -> Result<Self, SynthgenError> {
        if sentences.is_empty() {
            return Err(SynthgenError::EmptyBatch);
        }
        if batch_size == 0 {
            return Err(SynthgenError::InvalidBatchSize);
        }
        Ok(TranslationBatchRequest {
            sentences,
            prompt_header: TRANSLATION_PROMPT_HEADER.to_string(),
            batch_size,
        })
    }
}

/// Abstraction over the translation endpoint.
pub trait TranslationClient: Send + Sync {
    fn translate(&self, prompt: &str) -> Result<String, TransportError>;
}

/// Retry, refusal, and parallelism knobs for a translation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranslateOptions {
    /// Additional attempts after a transport failure.
    pub max_retries: usize,
    /// Case-insensitive markers that flag a per-sentence refusal.
    pub refusal_phrases: Vec<String>,
    /// Concurrent in-flight batches.
    pub parallelism: usize,
    /// Re-issue requests for previously refused/errored sentences instead of
    /// reusing the stored records.
    pub retry_failed: bool,
}

impl Default for TranslateOptions {
    fn default() -> Self {
        TranslateOptions {
            max_retries: 2,
            refusal_phrases: vec![
                "i cannot".into(),
                "i can't".into(),
                "i am unable".into(),
                "i'm unable".into(),
                "unable to translate".into(),
                "i'm sorry".into(),
                "i am sorry".into(),
            ],
            parallelism: 1,
            retry_failed: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthgenError {
    #[error("translation batch has no sentences")]
    EmptyBatch,
    #[error("batch size must be at least 1")]
    InvalidBatchSize,
    #[error("parallelism must be at least 1")]
    NoParallelism,
    #[error("record `{id}` is already translated; manual text applies only to refused or errored records")]
    ManualOnTranslated { id: String },
    #[error("manual translation for `{id}` is empty")]
    EmptyManualText { id: String },
    #[error("audit sample of {requested} exceeds the {available} translated records")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("records missing audit annotations: {}", .ids.join(", "))]
    MissingAudit { ids: Vec<String> },
    #[error("annotators disagree on `{id}` but no adjudicated verdict is given")]
    MissingAdjudication { id: String },
    #[error("record `{id}` has inconsistent status and translated text")]
    InconsistentRecord { id: String },
    #[error("audit row references unknown record `{id}`")]
    UnknownAuditId { id: String },
    #[error("{path}: {message}")]
    Store { path: String, message: String },
}

/// Builds the batch prompt: the canonical instruction header followed by
/// one numbered line per sentence, in order.
pub fn build_translation_prompt(sentences: &[(String, String)]) -> Result<String, SynthgenError> {
    build_prompt_with_header(TRANSLATION_PROMPT_HEADER, sentences)
}

fn build_prompt_with_header(
    header: &str,
    sentences: &[(String, String)],
) -> Result<String, SynthgenError> {
    if sentences.is_empty() {
        return Err(SynthgenError::EmptyBatch);
    }
    let mut prompt = header.to_string();
    for (i, (_, text)) in sentences.iter().enumerate() {
        prompt.push('\n');
        prompt.push_str(&format!("{}. {text}", i + 1));
    }
    Ok(prompt)
}

static NUMBERED_LINE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(\d+)\s*[.):]\s*(.*\S)\s*$").expect("valid pattern"));

/// Maps numbered response lines to 1-based sentence positions. Unnumbered
/// lines are ignored; the first occurrence of a number wins.
fn parse_numbered_response(response: &str) -> HashMap<usize, String> {
    let mut lines = HashMap::new();
    for line in response.lines() {
        if let Some(caps) = NUMBERED_LINE_RE.captures(line) {
            if let Ok(number) = caps[1].parse::<usize>() {
                lines.entry(number).or_insert_with(|| caps[2].to_string());
            }
        }
    }
    lines
}

fn is_refusal(text: &str, phrases: &[String]) -> bool {
    let lower = text.to_lowercase();
    phrases.iter().any(|p| lower.contains(&p.to_lowercase()))
}

/// Translates one request, chunking its sentences by `batch_size`. Exactly
/// one record comes back per input sentence, in input order: a numbered
/// response line maps to the same-numbered input, a missing number or a
/// refusal marker yields a refused record, and exhausted transport retries
/// yield errored records for the whole chunk.
pub fn translate_batch(
    client: &dyn TranslationClient,
    request: &TranslationBatchRequest,
    opts: &TranslateOptions,
) -> Result<Vec<TranslationRecord>, SynthgenError> {
    if request.sentences.is_empty() {
        return Err(SynthgenError::EmptyBatch);
    }
    if request.batch_size == 0 {
        return Err(SynthgenError::InvalidBatchSize);
    }
    if opts.parallelism == 0 {
        return Err(SynthgenError::NoParallelism);
    }

    let chunks: Vec<&[(String, String)]> = request.sentences.chunks(request.batch_size).collect();
    let run_chunk = |chunk: &[(String, String)]| -> Vec<TranslationRecord> {
        let prompt = build_prompt_with_header(&request.prompt_header, chunk)
            .expect("chunks are non-empty");
        let mut attempts = 0;
        let response = loop {
            match client.translate(&prompt) {
                Ok(response) => break Some(response),
                Err(err) => {
                    attempts += 1;
                    if attempts > opts.max_retries {
                        log::warn!("translation batch failed after {attempts} attempts: {err}");
                        break None;
                    }
                }
            }
        };
        let Some(response) = response else {
            return chunk
                .iter()
                .map(|(id, text)| TranslationRecord::errored(id, text))
                .collect();
        };
        let lines = parse_numbered_response(&response);
        chunk
            .iter()
            .enumerate()
            .map(|(i, (id, text))| match lines.get(&(i + 1)) {
                Some(translated) if !is_refusal(translated, &opts.refusal_phrases) => {
                    if script_profile(translated).devanagari_tokens == 0 {
                        log::warn!("translation of `{id}` contains no Devanagari tokens");
                    }
                    TranslationRecord::ok(id, text, translated.clone())
                }
                _ => TranslationRecord::refused(id, text),
            })
            .collect()
    };

    let mut per_chunk: Vec<Option<Vec<TranslationRecord>>> = vec![None; chunks.len()];
    if opts.parallelism == 1 || chunks.len() == 1 {
        for (i, chunk) in chunks.iter().enumerate() {
            per_chunk[i] = Some(run_chunk(chunk));
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Vec<TranslationRecord>>>> =
            chunks.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..opts.parallelism.min(chunks.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= chunks.len() {
                        break;
                    }
                    *slots[i].lock().expect("slot lock") = Some(run_chunk(chunks[i]));
                });
            }
        });
        for (i, slot) in slots.into_iter().enumerate() {
            per_chunk[i] = slot.into_inner().expect("slot lock");
        }
    }

    Ok(per_chunk
        .into_iter()
        .flat_map(|records| records.expect("chunk completed"))
        .collect())
}

/// Attaches a human translation to a refused or errored record.
pub fn mark_manual(
    record: &TranslationRecord,
    text: &str,
) -> Result<TranslationRecord, SynthgenError> {
    match record.status {
        TranslationStatus::Refused | TranslationStatus::Error => {}
        _ => {
            return Err(SynthgenError::ManualOnTranslated {
                id: record.source_id.clone(),
            })
        }
    }
    if text.trim().is_empty() {
        return Err(SynthgenError::EmptyManualText {
            id: record.source_id.clone(),
        });
    }
    Ok(TranslationRecord {
        source_id: record.source_id.clone(),
        source_text: record.source_text.clone(),
        translated_text: Some(text.to_string()),
        status: TranslationStatus::Manual,
        audit: record.audit,
    })
}

/// Uniform sample without replacement over records that carry a translation,
/// deterministic under `seed`. Output keeps the input's relative order.
pub fn sample_for_audit(
    records: &[TranslationRecord],
    n: usize,
    seed: u64,
) -> Result<Vec<TranslationRecord>, SynthgenError> {
    let candidates: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.translated_text.is_some())
        .map(|(i, _)| i)
        .collect();
    if n > candidates.len() {
        return Err(SynthgenError::SampleTooLarge {
            requested: n,
            available: candidates.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = candidates;
    pool.shuffle(&mut rng);
    pool.truncate(n);
    pool.sort_unstable();
    Ok(pool.into_iter().map(|i| records[i].clone()).collect())
}

/// Raw agreement and adjudicated unsatisfactory share over audited records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditStats {
    pub raw_agreement: f64,
    pub unsatisfactory_rate: f64,
}

/// Computes audit statistics; every record must carry a complete audit
/// entry.
pub fn audit_statistics(records: &[TranslationRecord]) -> Result<AuditStats, SynthgenError> {
    if records.is_empty() {
        return Err(SynthgenError::EmptyBatch);
    }
    let missing: Vec<String> = records
        .iter()
        .filter(|r| r.audit.is_none())
        .map(|r| r.source_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(SynthgenError::MissingAudit { ids: missing });
    }
    let total = records.len() as f64;
    let mut agreements = 0usize;
    let mut unsatisfactory = 0usize;
    for record in records {
        let audit = record.audit.expect("checked above");
        if audit.annotator_a == audit.annotator_b {
            agreements += 1;
        }
        if audit.adjudicated == AuditVerdict::Unsatisfactory {
            unsatisfactory += 1;
        }
    }
    Ok(AuditStats {
        raw_agreement: agreements as f64 / total,
        unsatisfactory_rate: unsatisfactory as f64 / total,
    })
}

/// Loads stored translation records, newest record per source id winning,
/// and validates their invariants.
pub fn load_translation_records(path: &Path) -> Result<Vec<TranslationRecord>, SynthgenError> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| SynthgenError::Store {
        path: display.clone(),
        message: e.to_string(),
    })?;
    let mut by_id: HashMap<String, usize> = HashMap::new();
    let mut records: Vec<TranslationRecord> = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| SynthgenError::Store {
            path: display.clone(),
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TranslationRecord =
            serde_json::from_str(&line).map_err(|e| SynthgenError::Store {
                path: display.clone(),
                message: format!("line {}: {e}", idx + 1),
            })?;
        record.validate()?;
        match by_id.get(&record.source_id) {
            Some(&pos) => records[pos] = record,
            None => {
                by_id.insert(record.source_id.clone(), records.len());
                records.push(record);
            }
        }
    }
    Ok(records)
}

pub fn append_translation_records(
    path: &Path,
    records: &[TranslationRecord],
) -> Result<(), SynthgenError> {
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| SynthgenError::Store {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    for record in records {
        let line = serde_json::to_string(record).expect("record serialization");
        writeln!(file, "{line}").map_err(|e| SynthgenError::Store {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    }
    Ok(())
}

/// Translates a corpus with a persistent record store at `store_path`.
/// Sentences already present in the store are reused without issuing any
/// client call; fresh records are appended. Output follows input order.
pub fn translate_corpus(
    client: &dyn TranslationClient,
    sentences: &[(String, String)],
    store_path: &Path,
    batch_size: usize,
    opts: &TranslateOptions,
) -> Result<Vec<TranslationRecord>, SynthgenError> {
    if sentences.is_empty() {
        return Err(SynthgenError::EmptyBatch);
    }
    let stored = if store_path.exists() {
        load_translation_records(store_path)?
    } else {
        Vec::new()
    };
    let mut by_id: HashMap<&str, &TranslationRecord> =
        stored.iter().map(|r| (r.source_id.as_str(), r)).collect();

    let reusable = |record: &TranslationRecord, text: &str| {
        record.source_text == text
            && (!opts.retry_failed
                || matches!(
                    record.status,
                    TranslationStatus::Ok | TranslationStatus::Manual
                ))
    };
    let pending: Vec<(String, String)> = sentences
        .iter()
        .filter(|(id, text)| !by_id.get(id.as_str()).is_some_and(|r| reusable(r, text)))
        .cloned()
        .collect();

    let fresh = if pending.is_empty() {
        Vec::new()
    } else {
        let request = TranslationBatchRequest::new(pending, batch_size)?;
        let records = translate_batch(client, &request, opts)?;
        append_translation_records(store_path, &records)?;
        records
    };
    let fresh_by_id: HashMap<&str, &TranslationRecord> =
        fresh.iter().map(|r| (r.source_id.as_str(), r)).collect();
    for (id, record) in &fresh_by_id {
        by_id.insert(id, record);
    }

    Ok(sentences
        .iter()
        .map(|(id, _)| (*by_id.get(id.as_str()).expect("translated or stored")).clone())
        .collect())
}

/// Writes the audit CSV (columns: id, annotator_a, annotator_b,
/// adjudicated), leaving verdict cells empty for unaudited records.
pub fn write_audit_csv(path: &Path, records: &[TranslationRecord]) -> Result<(), SynthgenError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| SynthgenError::Store {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let io_err = |e: csv::Error| SynthgenError::Store {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    writer
        .write_record(["id", "annotator_a", "annotator_b", "adjudicated"])
        .map_err(io_err)?;
    for record in records {
        let cells = match record.audit {
            Some(audit) => [
                record.source_id.clone(),
                audit.annotator_a.as_str().to_string(),
                audit.annotator_b.as_str().to_string(),
                audit.adjudicated.as_str().to_string(),
            ],
            None => [record.source_id.clone(), String::new(), String::new(), String::new()],
        };
        writer.write_record(&cells).map_err(io_err)?;
    }
    writer.flush().map_err(|e| SynthgenError::Store {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(())
}

/// Reads annotator verdicts from the audit CSV. A missing adjudicated cell
/// is filled with the agreed verdict; disagreement without adjudication is
/// an error.
pub fn read_audit_csv(path: &Path) -> Result<Vec<(String, AuditEntry)>, SynthgenError> {
    let store_err = |message: String| SynthgenError::Store {
        path: path.display().to_string(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| store_err(e.to_string()))?;
    let mut entries = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let row = row.map_err(|e| store_err(e.to_string()))?;
        let line = idx + 2; // header is line 1
        let id = row
            .get(0)
            .ok_or_else(|| store_err(format!("line {line}: missing id column")))?
            .to_string();
        let parse = |col: usize, name: &str| -> Result<Option<AuditVerdict>, SynthgenError> {
            let raw = row.get(col).unwrap_or("").trim();
            if raw.is_empty() {
                return Ok(None);
            }
            AuditVerdict::parse(raw)
                .map(Some)
                .ok_or_else(|| store_err(format!("line {line}: bad {name} verdict `{raw}`")))
        };
        let a = parse(1, "annotator_a")?;
        let b = parse(2, "annotator_b")?;
        let adjudicated = parse(3, "adjudicated")?;
        let (Some(a), Some(b)) = (a, b) else {
            continue; // template row left unannotated
        };
        let adjudicated = match adjudicated {
            Some(v) => v,
            None if a == b => a,
            None => return Err(SynthgenError::MissingAdjudication { id }),
        };
        entries.push((
            id,
            AuditEntry {
                annotator_a: a,
                annotator_b: b,
                adjudicated,
            },
        ));
    }
    Ok(entries)
}

/// Merges audit annotations into records by source id.
pub fn apply_audit(
    records: &[TranslationRecord],
    annotations: &[(String, AuditEntry)],
) -> Result<Vec<TranslationRecord>, SynthgenError> {
    let mut by_id: HashMap<&str, usize> = HashMap::new();
    for (i, record) in records.iter().enumerate() {
        by_id.insert(record.source_id.as_str(), i);
    }
    let mut merged = records.to_vec();
    for (id, entry) in annotations {
        let &pos = by_id
            .get(id.as_str())
            .ok_or_else(|| SynthgenError::UnknownAuditId { id: id.clone() })?;
        merged[pos].audit = Some(*entry);
    }
    Ok(merged)
}
