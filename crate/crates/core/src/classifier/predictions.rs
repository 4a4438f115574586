//! Per-sentence model outputs for one (model, dataset) pair.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::TaskLabel;

/// What a predictor produced for one sentence. LLM responses that cannot be
/// mapped to a label are kept distinct from transport failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionOutcome {
    Label(TaskLabel),
    Unparseable,
    Error,
}

impl PredictionOutcome {
    pub fn label(&self) -> Option<TaskLabel> {
        match self {
            PredictionOutcome::Label(label) => Some(*label),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PredictionOutcome::Label(label) => label.as_str(),
            PredictionOutcome::Unparseable => "unparseable",
            PredictionOutcome::Error => "error",
        }
    }
}

impl Serialize for PredictionOutcome {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for PredictionOutcome {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = String::deserialize(deserializer)?;
        match value.as_str() {
            "unparseable" => Ok(PredictionOutcome::Unparseable),
            "error" => Ok(PredictionOutcome::Error),
            other => TaskLabel::parse(other)
                .map(PredictionOutcome::Label)
                .ok_or_else(|| serde::de::Error::custom(format!("unknown outcome `{other}`"))),
        }
    }
}

/// One prediction. `score` is the positive-class probability and is present
/// only for binary score-producing predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub sentence_id: String,
    pub predicted: PredictionOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f32>,
}

/// All predictions of one model over one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub model_id: String,
    pub dataset_id: String,
    pub entries: Vec<PredictionEntry>,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let data = std::fs::read_to_string(path)?;
        serde_json::from_str(&data).map_err(Into::into)
    }
}
