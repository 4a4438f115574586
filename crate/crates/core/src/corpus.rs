//! Dataset loading, class balancing, and split construction.
//!
//! Datasets are JSONL files with one record per line (`id`, `text`, `label`,
//! `lang`). Splits are derived deterministically from a seed: records are
//! shuffled within each class and sliced in train → fine-tune → test order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Classification task a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Sarcasm,
    Sentiment,
}

impl Task {
    /// Canonical label order for the task. Index 0 is the positive class
    /// for binary scoring.
    pub fn labels(&self) -> &'static [TaskLabel] {
        match self {
            Task::Sarcasm => &[TaskLabel::Sarcastic, TaskLabel::NonSarcastic],
            Task::Sentiment => &[
                TaskLabel::Positive,
                TaskLabel::Negative,
                TaskLabel::Neutral,
            ],
        }
    }

    pub fn num_labels(&self) -> usize {
        self.labels().len()
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Sarcasm => write!(f, "sarcasm"),
            Task::Sentiment => write!(f, "sentiment"),
        }
    }
}

/// Gold label. Each value belongs to exactly one task's label set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskLabel {
    Sarcastic,
    NonSarcastic,
    Positive,
    Negative,
    Neutral,
}

impl TaskLabel {
    pub fn parse(value: &str) -> Option<Self> {
        match value {
            "sarcastic" => Some(TaskLabel::Sarcastic),
            "non-sarcastic" => Some(TaskLabel::NonSarcastic),
            "positive" => Some(TaskLabel::Positive),
            "negative" => Some(TaskLabel::Negative),
            "neutral" => Some(TaskLabel::Neutral),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskLabel::Sarcastic => "sarcastic",
            TaskLabel::NonSarcastic => "non-sarcastic",
            TaskLabel::Positive => "positive",
            TaskLabel::Negative => "negative",
            TaskLabel::Neutral => "neutral",
        }
    }

    pub fn task(&self) -> Task {
        match self {
            TaskLabel::Sarcastic | TaskLabel::NonSarcastic => Task::Sarcasm,
            _ => Task::Sentiment,
        }
    }
}

impl fmt::Display for TaskLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Language variant of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Lang {
    #[serde(rename = "en")]
    English,
    #[serde(rename = "hinglish")]
    Hinglish,
}

impl Lang {
    pub fn parse(value: &str) -> Option<Self> {
        match value {
            "en" => Some(Lang::English),
            "hinglish" => Some(Lang::Hinglish),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Lang::English => "en",
            Lang::Hinglish => "hinglish",
        }
    }
}

/// One text instance with its task, language variant, and gold label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSentence {
    pub id: String,
    pub text: String,
    pub task: Task,
    pub lang: Lang,
    pub label: TaskLabel,
}

impl LabeledSentence {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        lang: Lang,
        label: TaskLabel,
    ) -> Result<Self, CorpusError> {
        let id = id.into();
        let text = text.into();
        if text.trim().is_empty() {
            return Err(CorpusError::EmptyText { id });
        }
        Ok(LabeledSentence {
            id,
            text,
            task: label.task(),
            lang,
            label,
        })
    }
}

/// Wire format of a dataset record. `task` is implied by the label.
#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    id: String,
    text: String,
    label: String,
    lang: String,
}

impl Serialize for LabeledSentence {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RawRecord {
            id: self.id.clone(),
            text: self.text.clone(),
            label: self.label.as_str().to_string(),
            lang: self.lang.as_str().to_string(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LabeledSentence {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawRecord::deserialize(deserializer)?;
        let label = TaskLabel::parse(&raw.label)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown label `{}`", raw.label)))?;
        let lang = Lang::parse(&raw.lang)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown lang `{}`", raw.lang)))?;
        LabeledSentence::new(raw.id, raw.text, lang, label).map_err(serde::de::Error::custom)
    }
}

/// Named partition of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    FineTuneEnglish,
    FineTuneHinglish,
    Test,
}

impl SplitName {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::FineTuneEnglish => "finetune_english",
            SplitName::FineTuneHinglish => "finetune_hinglish",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordered list of records plus per-class counts, kept consistent by
/// construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub records: Vec<LabeledSentence>,
    pub class_counts: BTreeMap<TaskLabel, usize>,
}

impl DatasetSplit {
    /// Builds a split, recomputing class counts and checking that all
    /// records share a task and ids are unique.
    pub fn new(name: SplitName, records: Vec<LabeledSentence>) -> Result<Self, CorpusError> {
        let mut counts = BTreeMap::new();
        let mut task = None;
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (idx, rec) in records.iter().enumerate() {
            match task {
                None => task = Some(rec.task),
                Some(t) if t != rec.task => return Err(CorpusError::MixedTasks),
                _ => {}
            }
            if let Some(first) = seen.insert(rec.id.as_str(), idx + 1) {
                return Err(CorpusError::DuplicateId {
                    id: rec.id.clone(),
                    first_line: first,
                    second_line: idx + 1,
                });
            }
            *counts.entry(rec.label).or_insert(0) += 1;
        }
        Ok(DatasetSplit {
            name,
            records,
            class_counts: counts,
        })
    }

    pub fn task(&self) -> Option<Task> {
        self.records.first().map(|r| r.task)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        write_jsonl(path, &self.records)
    }

    pub fn load_jsonl(name: SplitName, path: &Path) -> Result<Self, CorpusError> {
        let records = load_labeled_jsonl(path, None)?;
        DatasetSplit::new(name, records)
    }
}

/// Whitespace-token script counts used to sanity-check code-mixed text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScriptProfile {
    pub latin_tokens: usize,
    pub devanagari_tokens: usize,
    pub other_tokens: usize,
}

impl ScriptProfile {
    pub fn total(&self) -> usize {
        self.latin_tokens + self.devanagari_tokens + self.other_tokens
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    MalformedLine {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: unknown label `{value}`")]
    UnknownLabel {
        path: String,
        line: usize,
        value: String,
    },
    #[error("{path}:{line}: label `{label}` does not belong to the {expected} task")]
    WrongTaskLabel {
        path: String,
        line: usize,
        label: TaskLabel,
        expected: Task,
    },
    #[error("record `{id}` has empty text")]
    EmptyText { id: String },
    #[error("duplicate id `{id}` on lines {first_line} and {second_line}")]
    DuplicateId {
        id: String,
        first_line: usize,
        second_line: usize,
    },
    #[error("input contains no records")]
    EmptyInput,
    #[error("balancing undefined: all records carry the single label `{label}`")]
    SingleClass { label: TaskLabel },
    #[error("records span more than one task")]
    MixedTasks,
    #[error("insufficient records: {}", format_shortfall(.shortfalls))]
    Shortfall {
        shortfalls: Vec<(TaskLabel, usize, usize)>,
    },
    #[error("no counterpart record for ids: {}", .ids.join(", "))]
    MissingCounterpart { ids: Vec<String> },
    #[error("counterpart of `{id}` carries label `{found}`, expected `{expected}`")]
    CounterpartLabelMismatch {
        id: String,
        expected: TaskLabel,
        found: TaskLabel,
    },
}

fn format_shortfall(shortfalls: &[(TaskLabel, usize, usize)]) -> String {
    shortfalls
        .iter()
        .map(|(label, needed, have)| format!("{label} needs {needed}, have {have}"))
        .collect::<Vec<_>>()
        .join("; ")
}

fn load_labeled_jsonl(
    path: &Path,
    expected_task: Option<Task>,
) -> Result<Vec<LabeledSentence>, CorpusError> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedLine {
                path: display.clone(),
                line: line_no,
                message: e.to_string(),
            })?;
        let label = TaskLabel::parse(&raw.label).ok_or_else(|| CorpusError::UnknownLabel {
            path: display.clone(),
            line: line_no,
            value: raw.label.clone(),
        })?;
        if let Some(task) = expected_task {
            if label.task() != task {
                return Err(CorpusError::WrongTaskLabel {
                    path: display.clone(),
                    line: line_no,
                    label,
                    expected: task,
                });
            }
        }
        let lang = Lang::parse(&raw.lang).ok_or_else(|| CorpusError::MalformedLine {
            path: display.clone(),
            line: line_no,
            message: format!("unknown lang `{}`", raw.lang),
        })?;
        if let Some(first) = seen.insert(raw.id.clone(), line_no) {
            return Err(CorpusError::DuplicateId {
                id: raw.id,
                first_line: first,
                second_line: line_no,
            });
        }
        records.push(LabeledSentence::new(raw.id, raw.text, lang, label)?);
    }
    Ok(records)
}

/// Loads a dataset of either task from JSONL, preserving order.
pub fn load_labeled(path: &Path) -> Result<Vec<LabeledSentence>, CorpusError> {
    load_labeled_jsonl(path, None)
}

/// Loads a sarcasm dataset (binary labels) from JSONL, preserving order.
pub fn load_sarcasm_headlines(path: &Path) -> Result<Vec<LabeledSentence>, CorpusError> {
    load_labeled_jsonl(path, Some(Task::Sarcasm))
}

/// Loads a three-class sentiment dataset from JSONL, preserving order.
pub fn load_sentiment_tweets(path: &Path) -> Result<Vec<LabeledSentence>, CorpusError> {
    load_labeled_jsonl(path, Some(Task::Sentiment))
}

/// Writes records as JSONL, one object per line.
pub fn write_jsonl(path: &Path, records: &[LabeledSentence]) -> Result<(), CorpusError> {
    let display = path.display().to_string();
    let io_err = |source| CorpusError::Io {
        path: display.clone(),
        source,
    };
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    for rec in records {
        let line = serde_json::to_string(rec).expect("record serialization is infallible");
        writeln!(file, "{line}").map_err(|source| CorpusError::Io {
            path: display.clone(),
            source,
        })?;
    }
    Ok(())
}

/// Downsamples every class to the minimum class count.
///
/// Selection within each class is uniform-random and deterministic under
/// `seed`; kept records stay in their original relative order.
pub fn balanced_undersample(
    records: &[LabeledSentence],
    seed: u64,
) -> Result<Vec<LabeledSentence>, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let mut by_label: BTreeMap<TaskLabel, Vec<usize>> = BTreeMap::new();
    for (idx, rec) in records.iter().enumerate() {
        by_label.entry(rec.label).or_default().push(idx);
    }
    if by_label.len() == 1 {
        let label = *by_label.keys().next().expect("non-empty map");
        return Err(CorpusError::SingleClass { label });
    }
    let min_count = by_label.values().map(Vec::len).min().expect("non-empty");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept: Vec<usize> = Vec::with_capacity(min_count * by_label.len());
    for indices in by_label.values() {
        let mut pool = indices.clone();
        pool.shuffle(&mut rng);
        kept.extend(pool.into_iter().take(min_count));
    }
    kept.sort_unstable();
    Ok(kept.into_iter().map(|i| records[i].clone()).collect())
}

/// Per-class record counts for the three sarcasm partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SarcasmSplitTargets {
    pub train_per_class: usize,
    pub finetune_per_class: usize,
    pub test_per_class: usize,
}

impl Default for SarcasmSplitTargets {
    fn default() -> Self {
        SarcasmSplitTargets {
            train_per_class: 9380,
            finetune_per_class: 1171,
            test_per_class: 1172,
        }
    }
}

/// Per-class record counts for the sentiment fine-tune partition. The
/// defaults are deliberately not equal; they are taken verbatim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentimentFinetuneTargets {
    pub positive: usize,
    pub negative: usize,
    pub neutral: usize,
}

impl Default for SentimentFinetuneTargets {
    fn default() -> Self {
        SentimentFinetuneTargets {
            positive: 644,
            negative: 646,
            neutral: 645,
        }
    }
}

impl SentimentFinetuneTargets {
    fn for_label(&self, label: TaskLabel) -> usize {
        match label {
            TaskLabel::Positive => self.positive,
            TaskLabel::Negative => self.negative,
            TaskLabel::Neutral => self.neutral,
            _ => 0,
        }
    }
}

/// Partitions a sarcasm corpus into train / fine-tune / test splits with the
/// requested per-class counts. Splits are disjoint by id and deterministic
/// under `seed`.
pub fn make_sarcasm_splits(
    records: &[LabeledSentence],
    seed: u64,
    targets: &SarcasmSplitTargets,
) -> Result<BTreeMap<SplitName, DatasetSplit>, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (idx, rec) in records.iter().enumerate() {
        if let Some(first) = seen.insert(rec.id.as_str(), idx + 1) {
            return Err(CorpusError::DuplicateId {
                id: rec.id.clone(),
                first_line: first,
                second_line: idx + 1,
            });
        }
    }

    let per_class = targets.train_per_class + targets.finetune_per_class + targets.test_per_class;
    let mut by_label: BTreeMap<TaskLabel, Vec<usize>> = BTreeMap::new();
    for (idx, rec) in records.iter().enumerate() {
        by_label.entry(rec.label).or_default().push(idx);
    }
    let shortfalls: Vec<_> = Task::Sarcasm
        .labels()
        .iter()
        .filter_map(|label| {
            let have = by_label.get(label).map_or(0, Vec::len);
            (have < per_class).then_some((*label, per_class, have))
        })
        .collect();
    if !shortfalls.is_empty() {
        return Err(CorpusError::Shortfall { shortfalls });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut finetune_idx = Vec::new();
    let mut test_idx = Vec::new();
    for label in Task::Sarcasm.labels() {
        let mut pool = by_label.remove(label).unwrap_or_default();
        pool.shuffle(&mut rng);
        let mut cursor = pool.into_iter();
        train_idx.extend(cursor.by_ref().take(targets.train_per_class));
        finetune_idx.extend(cursor.by_ref().take(targets.finetune_per_class));
        test_idx.extend(cursor.by_ref().take(targets.test_per_class));
    }

    let collect = |mut idx: Vec<usize>, name: SplitName| -> Result<DatasetSplit, CorpusError> {
        idx.sort_unstable();
        DatasetSplit::new(name, idx.into_iter().map(|i| records[i].clone()).collect())
    };

    let mut splits = BTreeMap::new();
    splits.insert(SplitName::Train, collect(train_idx, SplitName::Train)?);
    splits.insert(
        SplitName::FineTuneEnglish,
        collect(finetune_idx, SplitName::FineTuneEnglish)?,
    );
    splits.insert(SplitName::Test, collect(test_idx, SplitName::Test)?);
    Ok(splits)
}

/// Samples the sentiment fine-tune split with the exact per-class counts.
pub fn make_sentiment_finetune(
    records: &[LabeledSentence],
    seed: u64,
    targets: &SentimentFinetuneTargets,
    name: SplitName,
) -> Result<DatasetSplit, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let mut by_label: BTreeMap<TaskLabel, Vec<usize>> = BTreeMap::new();
    for (idx, rec) in records.iter().enumerate() {
        by_label.entry(rec.label).or_default().push(idx);
    }
    let shortfalls: Vec<_> = Task::Sentiment
        .labels()
        .iter()
        .filter_map(|label| {
            let needed = targets.for_label(*label);
            let have = by_label.get(label).map_or(0, Vec::len);
            (have < needed).then_some((*label, needed, have))
        })
        .collect();
    if !shortfalls.is_empty() {
        return Err(CorpusError::Shortfall { shortfalls });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = Vec::new();
    for label in Task::Sentiment.labels() {
        let mut pool = by_label.remove(label).unwrap_or_default();
        pool.shuffle(&mut rng);
        kept.extend(pool.into_iter().take(targets.for_label(*label)));
    }
    kept.sort_unstable();
    DatasetSplit::new(name, kept.into_iter().map(|i| records[i].clone()).collect())
}

/// Builds the language counterpart of a split: same ids and labels, texts
/// taken from `counterparts`. Record order follows the source split.
pub fn derive_parallel_split(
    split: &DatasetSplit,
    counterparts: &[LabeledSentence],
    name: SplitName,
) -> Result<DatasetSplit, CorpusError> {
    let by_id: HashMap<&str, &LabeledSentence> =
        counterparts.iter().map(|r| (r.id.as_str(), r)).collect();
    let missing: Vec<String> = split
        .records
        .iter()
        .filter(|r| !by_id.contains_key(r.id.as_str()))
        .map(|r| r.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(CorpusError::MissingCounterpart { ids: missing });
    }
    let mut records = Vec::with_capacity(split.len());
    for rec in &split.records {
        let twin = by_id[rec.id.as_str()];
        if twin.label != rec.label {
            return Err(CorpusError::CounterpartLabelMismatch {
                id: rec.id.clone(),
                expected: rec.label,
                found: twin.label,
            });
        }
        records.push(twin.clone());
    }
    DatasetSplit::new(name, records)
}

/// Split manifest written next to the split files: ids per split plus a
/// counts block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitManifest {
    pub splits: BTreeMap<String, Vec<String>>,
    pub counts: BTreeMap<String, BTreeMap<String, usize>>,
}

impl SplitManifest {
    pub fn from_splits<'a>(splits: impl IntoIterator<Item = &'a DatasetSplit>) -> Self {
        let mut manifest = SplitManifest {
            splits: BTreeMap::new(),
            counts: BTreeMap::new(),
        };
        for split in splits {
            let key = split.name.as_str().to_string();
            manifest
                .splits
                .insert(key.clone(), split.records.iter().map(|r| r.id.clone()).collect());
            manifest.counts.insert(
                key,
                split
                    .class_counts
                    .iter()
                    .map(|(label, count)| (label.as_str().to_string(), *count))
                    .collect(),
            );
        }
        manifest
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let json = serde_json::to_string_pretty(self).expect("manifest serialization");
        std::fs::write(path, json).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Counts whitespace tokens by script. A token counts as Devanagari if it
/// contains at least one code point in the Devanagari block, else Latin if
/// it contains an ASCII letter, else other.
pub fn script_profile(text: &str) -> ScriptProfile {
    let mut profile = ScriptProfile::default();
    for token in text.split_whitespace() {
        if token.chars().any(is_devanagari) {
            profile.devanagari_tokens += 1;
        } else if token.chars().any(|c| c.is_ascii_alphabetic()) {
            profile.latin_tokens += 1;
        } else {
            profile.other_tokens += 1;
        }
    }
    profile
}

fn is_devanagari(c: char) -> bool {
    ('\u{0900}'..='\u{097F}').contains(&c)
}

/// Ids shared between two splits. Empty for well-formed partitions.
pub fn overlapping_ids(a: &DatasetSplit, b: &DatasetSplit) -> Vec<String> {
    let ids: HashSet<&str> = a.records.iter().map(|r| r.id.as_str()).collect();
    b.records
        .iter()
        .filter(|r| ids.contains(r.id.as_str()))
        .map(|r| r.id.clone())
        .collect()
}
