//! Evaluation quantities: confusion matrices, accuracy, macro-F1,
//! precision–recall curves with step-wise AUPRC, and the paired bootstrap
//! significance test.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{PredictionOutcome, PredictionSet};
use crate::corpus::{DatasetSplit, Task, TaskLabel};

/// Binary confusion matrix with Sarcastic as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix2x2 {
    #[serde(rename = "tp")]
    pub true_pos: usize,
    #[serde(rename = "fn")]
    pub false_neg: usize,
    #[serde(rename = "fp")]
    pub false_pos: usize,
    #[serde(rename = "tn")]
    pub true_neg: usize,
}

impl ConfusionMatrix2x2 {
    pub fn new(true_pos: usize, false_neg: usize, false_pos: usize, true_neg: usize) -> Self {
        ConfusionMatrix2x2 {
            true_pos,
            false_neg,
            false_pos,
            true_neg,
        }
    }

    pub fn total(&self) -> usize {
        self.true_pos + self.false_neg + self.false_pos + self.true_neg
    }

    pub fn accuracy(&self) -> Result<f64, MetricsError> {
        if self.total() == 0 {
            return Err(MetricsError::EmptyMatrix);
        }
        Ok((self.true_pos + self.true_neg) as f64 / self.total() as f64)
    }

    /// Precision, recall, and F1 for the positive (Sarcastic) class.
    /// Zero denominators yield zero.
    pub fn positive_class(&self) -> ClassMetrics {
        ClassMetrics::from_counts(self.true_pos, self.false_pos, self.false_neg)
    }

    /// Precision, recall, and F1 for the negative class.
    pub fn negative_class(&self) -> ClassMetrics {
        ClassMetrics::from_counts(self.true_neg, self.false_neg, self.false_pos)
    }

    /// Unweighted mean of the two class F1 scores.
    pub fn macro_f1(&self) -> Result<f64, MetricsError> {
        if self.total() == 0 {
            return Err(MetricsError::EmptyMatrix);
        }
        Ok((self.positive_class().f1 + self.negative_class().f1) / 2.0)
    }
}

/// Per-class precision/recall/F1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassMetrics {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio_or_zero(tp, tp + fp);
        let recall = ratio_or_zero(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassMetrics {
            precision,
            recall,
            f1,
        }
    }
}

fn ratio_or_zero(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// How predictions without a usable label enter the matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidPredictionPolicy {
    /// Count under the incorrect cell for the gold class (default).
    #[default]
    Incorrect,
    /// Drop the item from the matrix entirely.
    Exclude,
}

/// One point of a precision–recall curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Precision–recall curve with its step-wise average-precision area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PRCurve {
    pub points: Vec<PrPoint>,
    pub auprc: f64,
}

/// Paired bootstrap outcome: 95% percentile interval of the accuracy
/// difference A−B.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub n_iterations: usize,
    pub resample_size: usize,
    pub delta_mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub significant: bool,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("prediction/gold id mismatch: missing {missing:?}, unexpected {unexpected:?}")]
    IdMismatch {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("gold split is not a binary sarcasm task")]
    NonBinaryTask,
    #[error("no positive golds; precision–recall curve undefined")]
    NoPositiveGolds,
    #[error("entries without scores: {0:?}")]
    MissingScores(Vec<String>),
    #[error("non-finite score encountered")]
    NonFiniteScore,
    #[error("empty input")]
    EmptyInput,
    #[error("n_iterations must be at least 1")]
    NoIterations,
}

fn check_ids(preds: &PredictionSet, golds: &DatasetSplit) -> Result<(), MetricsError> {
    let gold_ids: std::collections::HashSet<&str> =
        golds.records.iter().map(|r| r.id.as_str()).collect();
    let pred_ids: std::collections::HashSet<&str> =
        preds.entries.iter().map(|e| e.sentence_id.as_str()).collect();
    let mut missing: Vec<String> = gold_ids
        .difference(&pred_ids)
        .map(|s| s.to_string())
        .collect();
    let mut unexpected: Vec<String> = pred_ids
        .difference(&gold_ids)
        .map(|s| s.to_string())
        .collect();
    if missing.is_empty() && unexpected.is_empty() && preds.entries.len() == golds.len() {
        return Ok(());
    }
    missing.sort();
    unexpected.sort();
    Err(MetricsError::IdMismatch {
        missing,
        unexpected,
    })
}

/// Builds the binary confusion matrix, counting unparseable and errored
/// predictions under the incorrect cell.
pub fn confusion(
    preds: &PredictionSet,
    golds: &DatasetSplit,
) -> Result<ConfusionMatrix2x2, MetricsError> {
    confusion_with_policy(preds, golds, InvalidPredictionPolicy::Incorrect)
}

pub fn confusion_with_policy(
    preds: &PredictionSet,
    golds: &DatasetSplit,
    policy: InvalidPredictionPolicy,
) -> Result<ConfusionMatrix2x2, MetricsError> {
    if golds.task() != Some(Task::Sarcasm) {
        return Err(MetricsError::NonBinaryTask);
    }
    check_ids(preds, golds)?;
    let by_id: HashMap<&str, &PredictionOutcome> = preds
        .entries
        .iter()
        .map(|e| (e.sentence_id.as_str(), &e.predicted))
        .collect();
    let mut cm = ConfusionMatrix2x2::new(0, 0, 0, 0);
    for gold in &golds.records {
        let outcome = by_id[gold.id.as_str()];
        let predicted = outcome.label();
        if predicted.is_none() && policy == InvalidPredictionPolicy::Exclude {
            continue;
        }
        match (gold.label, predicted) {
            (TaskLabel::Sarcastic, Some(TaskLabel::Sarcastic)) => cm.true_pos += 1,
            (TaskLabel::Sarcastic, _) => cm.false_neg += 1,
            (TaskLabel::NonSarcastic, Some(TaskLabel::NonSarcastic)) => cm.true_neg += 1,
            (TaskLabel::NonSarcastic, _) => cm.false_pos += 1,
            _ => return Err(MetricsError::NonBinaryTask),
        }
    }
    Ok(cm)
}

/// Fraction of correct predictions.
pub fn accuracy(cm: &ConfusionMatrix2x2) -> Result<f64, MetricsError> {
    cm.accuracy()
}

/// Unweighted mean of the per-class F1 scores.
pub fn macro_f1(cm: &ConfusionMatrix2x2) -> Result<f64, MetricsError> {
    cm.macro_f1()
}

/// Sweeps decision thresholds over the distinct scores in descending order
/// (ties grouped) and integrates step-wise: AUPRC = Σ (Rᵢ − Rᵢ₋₁)·Pᵢ.
pub fn pr_curve(pairs: &[(f64, bool)]) -> Result<PRCurve, MetricsError> {
    if pairs.iter().any(|(score, _)| !score.is_finite()) {
        return Err(MetricsError::NonFiniteScore);
    }
    let positives = pairs.iter().filter(|(_, gold)| *gold).count();
    if positives == 0 {
        return Err(MetricsError::NoPositiveGolds);
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| {
        pairs[b].0.partial_cmp(&pairs[a].0).expect("finite scores")
    });

    let mut points = Vec::new();
    let mut auprc = 0.0;
    let mut prev_recall = 0.0;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let threshold = pairs[order[i]].0;
        while i < order.len() && pairs[order[i]].0 == threshold {
            if pairs[order[i]].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        points.push(PrPoint { recall, precision });
        auprc += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(PRCurve { points, auprc })
}

/// Builds score/gold pairs from a score-producing prediction set. Entries
/// without scores are rejected.
pub fn score_pairs(
    preds: &PredictionSet,
    golds: &DatasetSplit,
) -> Result<Vec<(f64, bool)>, MetricsError> {
    if golds.task() != Some(Task::Sarcasm) {
        return Err(MetricsError::NonBinaryTask);
    }
    check_ids(preds, golds)?;
    let missing: Vec<String> = preds
        .entries
        .iter()
        .filter(|e| e.score.is_none())
        .map(|e| e.sentence_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingScores(missing));
    }
    let by_id: HashMap<&str, f64> = preds
        .entries
        .iter()
        .map(|e| (e.sentence_id.as_str(), f64::from(e.score.unwrap())))
        .collect();
    Ok(golds
        .records
        .iter()
        .map(|r| (by_id[r.id.as_str()], r.label == TaskLabel::Sarcastic))
        .collect())
}

/// Arithmetic mean of curve areas.
pub fn mean_auprc(curves: &[PRCurve]) -> Result<f64, MetricsError> {
    if curves.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(curves.iter().map(|c| c.auprc).sum::<f64>() / curves.len() as f64)
}

/// Paired bootstrap over the shared test set; every iteration resamples
/// `|golds|` items with replacement.
pub fn paired_bootstrap(
    preds_a: &PredictionSet,
    preds_b: &PredictionSet,
    golds: &DatasetSplit,
    n_iterations: usize,
    seed: u64,
) -> Result<BootstrapResult, MetricsError> {
    paired_bootstrap_sized(preds_a, preds_b, golds, n_iterations, None, seed)
}

/// Paired bootstrap with an explicit resample size.
pub fn paired_bootstrap_sized(
    preds_a: &PredictionSet,
    preds_b: &PredictionSet,
    golds: &DatasetSplit,
    n_iterations: usize,
    resample_size: Option<usize>,
    seed: u64,
) -> Result<BootstrapResult, MetricsError> {
    if n_iterations == 0 {
        return Err(MetricsError::NoIterations);
    }
    if golds.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    check_ids(preds_a, golds)?;
    check_ids(preds_b, golds)?;
    let correct = |preds: &PredictionSet| -> Vec<f64> {
        let by_id: HashMap<&str, &PredictionOutcome> = preds
            .entries
            .iter()
            .map(|e| (e.sentence_id.as_str(), &e.predicted))
            .collect();
        golds
            .records
            .iter()
            .map(|r| match by_id[r.id.as_str()].label() {
                Some(label) if label == r.label => 1.0,
                _ => 0.0,
            })
            .collect()
    };
    let a = correct(preds_a);
    let b = correct(preds_b);
    bootstrap_over_correctness(&a, &b, n_iterations, resample_size, seed)
}

/// Paired bootstrap over pre-computed per-item correctness indicators.
pub fn paired_bootstrap_correctness(
    a_correct: &[bool],
    b_correct: &[bool],
    n_iterations: usize,
    resample_size: Option<usize>,
    seed: u64,
) -> Result<BootstrapResult, MetricsError> {
    if n_iterations == 0 {
        return Err(MetricsError::NoIterations);
    }
    if a_correct.is_empty() || a_correct.len() != b_correct.len() {
        return Err(MetricsError::EmptyInput);
    }
    let to_f64 = |v: &[bool]| v.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect::<Vec<_>>();
    bootstrap_over_correctness(&to_f64(a_correct), &to_f64(b_correct), n_iterations, resample_size, seed)
}

fn bootstrap_over_correctness(
    a: &[f64],
    b: &[f64],
    n_iterations: usize,
    resample_size: Option<usize>,
    seed: u64,
) -> Result<BootstrapResult, MetricsError> {
    let n = a.len();
    let resample_size = resample_size.unwrap_or(n);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut deltas = Vec::with_capacity(n_iterations);
    for _ in 0..n_iterations {
        let mut sum = 0.0;
        for _ in 0..resample_size {
            let idx = rng.random_range(0..n);
            sum += a[idx] - b[idx];
        }
        deltas.push(sum / resample_size as f64);
    }
    let delta_mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
    deltas.sort_by(|x, y| x.partial_cmp(y).expect("finite deltas"));
    let ci_low = percentile(&deltas, 0.025);
    let ci_high = percentile(&deltas, 0.975);
    Ok(BootstrapResult {
        n_iterations,
        resample_size,
        delta_mean,
        ci_low,
        ci_high,
        significant: ci_low > 0.0 || ci_high < 0.0,
    })
}

/// Linear-interpolated percentile of an ascending-sorted slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < n {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[n - 1]
    }
}
