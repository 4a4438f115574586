//! Benchmark toolkit for sarcasm detection in code-mixed Hinglish text:
//! corpus preparation, synthetic code-mixed data generation, sequential
//! transfer fine-tuning of a compact encoder, zero/few-shot LLM evaluation,
//! and the statistics used to compare them.

pub mod classifier;
pub mod config;
pub mod corpus;
pub mod experiments;
pub mod http;
pub mod llm_eval;
pub mod metrics;
pub mod synthgen;

pub use classifier::{
    ClassifierConfig, ModelCheckpoint, PredictionEntry, PredictionOutcome, PredictionSet,
};
pub use corpus::{DatasetSplit, LabeledSentence, Lang, SplitName, Task, TaskLabel};
pub use metrics::{BootstrapResult, ConfusionMatrix2x2, PRCurve};
pub use synthgen::{TranslationRecord, TranslationStatus};
