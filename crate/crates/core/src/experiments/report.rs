//! Report bundle: aligned-column result tables, per-cell metric JSON,
//! precision–recall and ablation plots, misclassified-sentence exports, and
//! deltas against stored published reference numbers. Output is byte-stable
//! for fixed inputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    write_json, AblationPoint, CellId, ExperimentError, ExperimentResult, StrategyId,
};
use crate::classifier::{PredictionOutcome, PredictionSet};
use crate::corpus::{DatasetSplit, SplitName};
use crate::llm_eval::PromptMode;
use crate::metrics::{pr_curve, score_pairs, ConfusionMatrix2x2, PRCurve};

/// Published numbers used as regression targets, stored as data rather than
/// embedded in code.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PublishedReference {
    #[serde(default)]
    pub strategies: BTreeMap<String, ReferenceMetrics>,
    /// model → mode → dataset → metrics
    #[serde(default)]
    pub llm_grid: BTreeMap<String, BTreeMap<String, BTreeMap<String, ReferenceMetrics>>>,
    #[serde(default)]
    pub confusion_matrices: BTreeMap<String, ConfusionMatrix2x2>,
    #[serde(default)]
    pub mean_auprc: BTreeMap<String, f64>,
    #[serde(default)]
    pub cv_mean_train_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ReferenceMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
}

impl PublishedReference {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let raw = std::fs::read_to_string(path).map_err(|e| ExperimentError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&raw).map_err(|e| ExperimentError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Files written by `emit_report`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportBundle {
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReferenceDelta {
    cell: String,
    metric: String,
    ours: f64,
    reference: f64,
    delta: f64,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ExperimentError + '_ {
    move |e| ExperimentError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Collects all persisted cell results under `runs_dir`, sorted by cell
/// directory name.
pub fn collect_results(runs_dir: &Path) -> Result<Vec<ExperimentResult>, ExperimentError> {
    let mut results = Vec::new();
    if !runs_dir.is_dir() {
        return Ok(results);
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(runs_dir)
        .map_err(io_err(runs_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for entry in entries {
        let result_path = entry.join("result.json");
        if result_path.is_file() {
            let raw = std::fs::read_to_string(&result_path).map_err(io_err(&result_path))?;
            let result: ExperimentResult =
                serde_json::from_str(&raw).map_err(|e| ExperimentError::Io {
                    path: result_path.display().to_string(),
                    message: e.to_string(),
                })?;
            results.push(result);
        }
    }
    Ok(results)
}

/// Collects ablation point files under `runs_dir` (`ablation_<strategy>/`).
pub fn collect_ablations(
    runs_dir: &Path,
) -> Result<BTreeMap<String, Vec<AblationPoint>>, ExperimentError> {
    let mut ablations = BTreeMap::new();
    if !runs_dir.is_dir() {
        return Ok(ablations);
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(runs_dir)
        .map_err(io_err(runs_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for entry in entries {
        let name = entry
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let points_path = entry.join("points.json");
        if let Some(strategy) = name.strip_prefix("ablation_") {
            if points_path.is_file() {
                let raw = std::fs::read_to_string(&points_path).map_err(io_err(&points_path))?;
                let points: Vec<AblationPoint> =
                    serde_json::from_str(&raw).map_err(|e| ExperimentError::Io {
                        path: points_path.display().to_string(),
                        message: e.to_string(),
                    })?;
                ablations.insert(strategy.to_uppercase(), points);
            }
        }
    }
    Ok(ablations)
}

fn pad(text: &str, width: usize) -> String {
    format!("{text:<width$}")
}

fn metric_cell(result: &ExperimentResult) -> String {
    match &result.metrics {
        Some(m) => format!("{:.5} / {:.2}", m.accuracy, m.macro_f1),
        None => "—".to_string(),
    }
}

fn render_llm_table(results: &[ExperimentResult]) -> String {
    let mut models: Vec<String> = Vec::new();
    let mut datasets: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(String, String, String), String> = BTreeMap::new();
    for result in results {
        if let CellId::LlmCell {
            model,
            mode,
            dataset,
        } = &result.cell
        {
            if !models.contains(model) {
                models.push(model.clone());
            }
            if !datasets.contains(dataset) {
                datasets.push(dataset.clone());
            }
            cells.insert(
                (model.clone(), mode.as_str().to_string(), dataset.clone()),
                metric_cell(result),
            );
        }
    }
    models.sort();
    datasets.sort();
    let modes = [PromptMode::ZeroShot, PromptMode::FewShot];

    let mut columns: Vec<(String, String)> = Vec::new();
    for mode in &modes {
        for dataset in &datasets {
            columns.push((mode.as_str().to_string(), dataset.clone()));
        }
    }
    let mut header = vec!["model".to_string()];
    header.extend(columns.iter().map(|(m, d)| format!("{m}/{d}")));
    let mut rows: Vec<Vec<String>> = vec![header];
    for model in &models {
        let mut row = vec![model.clone()];
        for (mode, dataset) in &columns {
            row.push(
                cells
                    .get(&(model.clone(), mode.clone(), dataset.clone()))
                    .cloned()
                    .unwrap_or_else(|| "—".to_string()),
            );
        }
        rows.push(row);
    }
    render_aligned("LLM sarcasm detection (accuracy / macro-F1)", &rows)
}

fn render_strategy_table(results: &[ExperimentResult]) -> String {
    let mut rows: Vec<Vec<String>> = vec![vec![
        "strategy".to_string(),
        "finetune data".to_string(),
        "testing data".to_string(),
        "accuracy".to_string(),
        "macro-F1".to_string(),
    ]];
    let mut by_id: BTreeMap<StrategyId, &ExperimentResult> = BTreeMap::new();
    for result in results {
        if let CellId::Strategy { id } = &result.cell {
            by_id.insert(*id, result);
        }
    }
    for id in StrategyId::all() {
        let Some(result) = by_id.get(&id) else {
            continue;
        };
        let dataset = PredictionSet::load(&result.artifacts.predictions)
            .map(|p| p.dataset_id)
            .unwrap_or_else(|_| "—".to_string());
        let (acc, f1) = match &result.metrics {
            Some(m) => (format!("{:.5}", m.accuracy), format!("{:.2}", m.macro_f1)),
            None => ("—".to_string(), "—".to_string()),
        };
        rows.push(vec![
            id.as_str().to_string(),
            id.finetune_description().to_string(),
            dataset,
            acc,
            f1,
        ]);
    }
    render_aligned("Classifier fine-tuning strategies", &rows)
}

fn render_aligned(title: &str, rows: &[Vec<String>]) -> String {
    let columns = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0usize; columns];
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let mut out = format!("{title}\n\n");
    for (idx, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, cell)| pad(cell, widths[i]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if idx == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&rule.join("  "));
            out.push('\n');
        }
    }
    out
}

/// Minimal deterministic SVG line chart.
fn svg_line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 440.0;
    const M: f64 = 60.0;
    let palette = ["#c0392b", "#2980b9", "#27ae60", "#8e44ad"];
    let points: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in &points {
        x_min = x_min.min(*x);
        x_max = x_max.max(*x);
        y_min = y_min.min(*y);
        y_max = y_max.max(*y);
    }
    if points.is_empty() {
        x_min = 0.0;
        x_max = 1.0;
        y_min = 0.0;
        y_max = 1.0;
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    if y_max == y_min {
        y_max = y_min + 1.0;
    }
    let sx = |x: f64| M + (x - x_min) / (x_max - x_min) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y_min) / (y_max - y_min) * (H - 2.0 * M);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{title}</text>\n",
        W / 2.0
    );
    svg.push_str(&format!(
        "<line x1=\"{M}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        H - M,
        W - M,
        H - M
    ));
    svg.push_str(&format!(
        "<line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        H - M
    ));
    for i in 0..=4 {
        let frac = i as f64 / 4.0;
        let x_val = x_min + frac * (x_max - x_min);
        let y_val = y_min + frac * (y_max - y_min);
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{x_val:.2}</text>\n",
            sx(x_val),
            H - M + 18.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{y_val:.2}</text>\n",
            M - 8.0,
            sy(y_val) + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{x_label}</text>\n",
        W / 2.0,
        H - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 16 {:.1})\">{y_label}</text>\n",
        H / 2.0,
        H / 2.0
    ));
    for (si, (label, pts)) in series.iter().enumerate() {
        let color = palette[si % palette.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|(x, y)| format!("{:.1},{:.1}", sx(*x), sy(*y)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{label}</text>\n",
            W - M - 140.0,
            M + 16.0 * si as f64
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn load_golds(
    splits_dir: &Path,
    dataset: &str,
    cache: &mut BTreeMap<String, Option<DatasetSplit>>,
) -> Option<DatasetSplit> {
    if let Some(found) = cache.get(dataset) {
        return found.clone();
    }
    let path = splits_dir.join(format!("{dataset}.jsonl"));
    let loaded = if path.is_file() {
        DatasetSplit::load_jsonl(SplitName::Test, &path).ok()
    } else {
        log::warn!("gold split `{dataset}` not found under {}", splits_dir.display());
        None
    };
    cache.insert(dataset.to_string(), loaded.clone());
    loaded
}

fn write_pr_curve(
    out_dir: &Path,
    cell: &str,
    curve: &PRCurve,
) -> Result<Vec<PathBuf>, ExperimentError> {
    let csv_path = out_dir.join(format!("pr_curve_{cell}.csv"));
    let mut csv = String::from("recall,precision\n");
    for point in &curve.points {
        csv.push_str(&format!("{:.6},{:.6}\n", point.recall, point.precision));
    }
    std::fs::write(&csv_path, csv).map_err(io_err(&csv_path))?;
    let svg_path = out_dir.join(format!("pr_curve_{cell}.svg"));
    let series = vec![(
        format!("auprc {:.4}", curve.auprc),
        curve.points.iter().map(|p| (p.recall, p.precision)).collect(),
    )];
    std::fs::write(
        &svg_path,
        svg_line_chart(&format!("Precision–recall: {cell}"), "recall", "precision", &series),
    )
    .map_err(io_err(&svg_path))?;
    Ok(vec![csv_path, svg_path])
}

fn write_misclassified(
    out_dir: &Path,
    cell: &str,
    preds: &PredictionSet,
    golds: &DatasetSplit,
) -> Result<PathBuf, ExperimentError> {
    let path = out_dir.join(format!("misclassified_{cell}.csv"));
    let mut writer = csv::Writer::from_path(&path).map_err(|e| ExperimentError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let csv_err = |e: csv::Error| ExperimentError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    writer
        .write_record(["sentence_id", "text", "gold", "predicted"])
        .map_err(csv_err)?;
    let by_id: BTreeMap<&str, &PredictionOutcome> = preds
        .entries
        .iter()
        .map(|e| (e.sentence_id.as_str(), &e.predicted))
        .collect();
    for gold in &golds.records {
        let Some(outcome) = by_id.get(gold.id.as_str()) else {
            continue;
        };
        let correct = outcome.label() == Some(gold.label);
        if !correct {
            writer
                .write_record([
                    gold.id.as_str(),
                    gold.text.as_str(),
                    gold.label.as_str(),
                    outcome.as_str(),
                ])
                .map_err(csv_err)?;
        }
    }
    writer.flush().map_err(|e| ExperimentError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(path)
}

fn reference_deltas(
    results: &[ExperimentResult],
    reference: &PublishedReference,
) -> Vec<ReferenceDelta> {
    let mut deltas = Vec::new();
    for result in results {
        let Some(metrics) = &result.metrics else {
            continue;
        };
        let cell_name = result.cell.dir_name();
        let reference_metrics = match &result.cell {
            CellId::Strategy { id } => reference.strategies.get(id.as_str()).copied(),
            CellId::LlmCell {
                model,
                mode,
                dataset,
            } => reference
                .llm_grid
                .get(model)
                .and_then(|modes| modes.get(mode.as_str()))
                .and_then(|datasets| datasets.get(dataset))
                .copied(),
        };
        if let Some(r) = reference_metrics {
            deltas.push(ReferenceDelta {
                cell: cell_name.clone(),
                metric: "accuracy".into(),
                ours: metrics.accuracy,
                reference: r.accuracy,
                delta: metrics.accuracy - r.accuracy,
            });
            deltas.push(ReferenceDelta {
                cell: cell_name.clone(),
                metric: "macro_f1".into(),
                ours: metrics.macro_f1,
                reference: r.macro_f1,
                delta: metrics.macro_f1 - r.macro_f1,
            });
        }
        if let (CellId::Strategy { id }, Some(auprc)) = (&result.cell, metrics.auprc) {
            if let Some(r) = reference.mean_auprc.get(id.as_str()) {
                deltas.push(ReferenceDelta {
                    cell: cell_name,
                    metric: "auprc_vs_published_mean".into(),
                    ours: auprc,
                    reference: *r,
                    delta: auprc - *r,
                });
            }
        }
    }
    deltas.sort_by(|a, b| (&a.cell, &a.metric).cmp(&(&b.cell, &b.metric)));
    deltas
}

/// Writes the full report bundle for every persisted result under
/// `runs_dir`. Failed cells render as `—` in the tables.
pub fn emit_report(
    runs_dir: &Path,
    splits_dir: &Path,
    reference: Option<&PublishedReference>,
    out_dir: &Path,
) -> Result<ReportBundle, ExperimentError> {
    let results = collect_results(runs_dir)?;
    let ablations = collect_ablations(runs_dir)?;
    if results.is_empty() && ablations.is_empty() {
        return Err(ExperimentError::BadInput(format!(
            "no results found under {}",
            runs_dir.display()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut files = Vec::new();

    let llm_table = out_dir.join("llm_table.txt");
    std::fs::write(&llm_table, render_llm_table(&results)).map_err(io_err(&llm_table))?;
    files.push(llm_table);

    let model_table = out_dir.join("model_table.txt");
    std::fs::write(&model_table, render_strategy_table(&results)).map_err(io_err(&model_table))?;
    files.push(model_table);

    #[derive(Serialize)]
    struct MetricsDoc<'a> {
        cells: &'a [ExperimentResult],
        ablations: &'a BTreeMap<String, Vec<AblationPoint>>,
    }
    let metrics_path = out_dir.join("metrics.json");
    write_json(
        &metrics_path,
        &MetricsDoc {
            cells: &results,
            ablations: &ablations,
        },
    )?;
    files.push(metrics_path);

    let mut gold_cache: BTreeMap<String, Option<DatasetSplit>> = BTreeMap::new();
    for result in &results {
        if result.metrics.is_none() {
            continue;
        }
        let Ok(preds) = PredictionSet::load(&result.artifacts.predictions) else {
            continue;
        };
        let Some(golds) = load_golds(splits_dir, &preds.dataset_id, &mut gold_cache) else {
            continue;
        };
        let cell = result.cell.dir_name();
        files.push(write_misclassified(out_dir, &cell, &preds, &golds)?);
        if preds.entries.iter().all(|e| e.score.is_some()) && !preds.is_empty() {
            if let Ok(pairs) = score_pairs(&preds, &golds) {
                if let Ok(curve) = pr_curve(&pairs) {
                    files.extend(write_pr_curve(out_dir, &cell, &curve)?);
                }
            }
        }
    }

    for (strategy, points) in &ablations {
        let key = strategy.to_lowercase();
        let csv_path = out_dir.join(format!("ablation_{key}.csv"));
        let mut csv = String::from("train_size,accuracy,macro_f1\n");
        for p in points {
            csv.push_str(&format!("{},{:.5},{:.5}\n", p.train_size, p.accuracy, p.macro_f1));
        }
        std::fs::write(&csv_path, csv).map_err(io_err(&csv_path))?;
        files.push(csv_path);

        let svg_path = out_dir.join(format!("ablation_{key}.svg"));
        let series = vec![
            (
                "accuracy".to_string(),
                points
                    .iter()
                    .map(|p| (p.train_size as f64, p.accuracy))
                    .collect::<Vec<_>>(),
            ),
            (
                "macro-F1".to_string(),
                points
                    .iter()
                    .map(|p| (p.train_size as f64, p.macro_f1))
                    .collect::<Vec<_>>(),
            ),
        ];
        std::fs::write(
            &svg_path,
            svg_line_chart(
                &format!("Training size vs performance: {strategy}"),
                "training size",
                "score",
                &series,
            ),
        )
        .map_err(io_err(&svg_path))?;
        files.push(svg_path);
    }

    if let Some(reference) = reference {
        let deltas = reference_deltas(&results, reference);
        let delta_path = out_dir.join("reference_delta.json");
        write_json(&delta_path, &deltas)?;
        files.push(delta_path);
    }

    Ok(ReportBundle { files })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::PredictionEntry;
    use crate::corpus::{write_jsonl, LabeledSentence, Lang, TaskLabel};
    use crate::experiments::{ArtifactPaths, MetricsBundle};

    fn fake_cell(
        runs_dir: &Path,
        cell: CellId,
        preds: &PredictionSet,
        metrics: Option<MetricsBundle>,
    ) -> ExperimentResult {
        let cell_dir = runs_dir.join(cell.dir_name());
        std::fs::create_dir_all(&cell_dir).unwrap();
        let artifacts = ArtifactPaths {
            dir: cell_dir.clone(),
            predictions: cell_dir.join("predictions.json"),
            metrics: cell_dir.join("metrics.json"),
            checkpoint: None,
        };
        preds.save(&artifacts.predictions).unwrap();
        let result = ExperimentResult {
            cell,
            seed: 1,
            metrics,
            error: if artifacts.predictions.exists() {
                None
            } else {
                Some("missing".into())
            },
            artifacts,
        };
        write_json(&cell_dir.join("result.json"), &result).unwrap();
        result
    }

    fn binary_preds(dataset: &str, golds: &DatasetSplit, flip_first: usize) -> PredictionSet {
        let entries = golds
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let label = if i < flip_first {
                    match r.label {
                        TaskLabel::Sarcastic => TaskLabel::NonSarcastic,
                        _ => TaskLabel::Sarcastic,
                    }
                } else {
                    r.label
                };
                PredictionEntry {
                    sentence_id: r.id.clone(),
                    predicted: PredictionOutcome::Label(label),
                    score: Some(if label == TaskLabel::Sarcastic { 0.9 } else { 0.1 }),
                }
            })
            .collect();
        PredictionSet {
            model_id: "fake".into(),
            dataset_id: dataset.to_string(),
            entries,
        }
    }

    fn world() -> (tempfile::TempDir, PathBuf, PathBuf, DatasetSplit) {
        let dir = tempfile::tempdir().unwrap();
        let splits_dir = dir.path().join("splits");
        let runs_dir = dir.path().join("runs");
        std::fs::create_dir_all(&splits_dir).unwrap();
        let records: Vec<LabeledSentence> = (0..4)
            .flat_map(|i| {
                [
                    LabeledSentence::new(
                        format!("s{i}"),
                        format!("totally fine {i}"),
                        Lang::Hinglish,
                        TaskLabel::Sarcastic,
                    )
                    .unwrap(),
                    LabeledSentence::new(
                        format!("n{i}"),
                        format!("market opens {i}"),
                        Lang::Hinglish,
                        TaskLabel::NonSarcastic,
                    )
                    .unwrap(),
                ]
            })
            .collect();
        let golds = DatasetSplit::new(SplitName::Test, records).unwrap();
        write_jsonl(&splits_dir.join("test_hinglish.jsonl"), &golds.records).unwrap();
        (dir, splits_dir, runs_dir, golds)
    }

    #[test]
    fn report_is_byte_stable_and_renders_missing_cells() {
        let (dir, splits_dir, runs_dir, golds) = world();
        let preds = binary_preds("test_hinglish", &golds, 2);
        let cm = crate::metrics::confusion(&preds, &golds).unwrap();
        let bundle = MetricsBundle {
            accuracy: cm.accuracy().unwrap(),
            macro_f1: cm.macro_f1().unwrap(),
            confusion: cm,
            auprc: Some(0.91),
        };
        fake_cell(
            &runs_dir,
            CellId::Strategy {
                id: StrategyId::FtCmSarc,
            },
            &preds,
            Some(bundle.clone()),
        );
        fake_cell(
            &runs_dir,
            CellId::LlmCell {
                model: "phi4".into(),
                mode: PromptMode::ZeroShot,
                dataset: "test_hinglish".into(),
            },
            &preds,
            Some(bundle),
        );
        // a failed cell renders as a dash
        fake_cell(
            &runs_dir,
            CellId::LlmCell {
                model: "phi4".into(),
                mode: PromptMode::FewShot,
                dataset: "test_hinglish".into(),
            },
            &preds,
            None,
        );

        let out_a = dir.path().join("report_a");
        let out_b = dir.path().join("report_b");
        let bundle_a = emit_report(&runs_dir, &splits_dir, None, &out_a).unwrap();
        let bundle_b = emit_report(&runs_dir, &splits_dir, None, &out_b).unwrap();
        assert_eq!(bundle_a.files.len(), bundle_b.files.len());
        for (a, b) in bundle_a.files.iter().zip(&bundle_b.files) {
            assert_eq!(
                std::fs::read(a).unwrap(),
                std::fs::read(b).unwrap(),
                "mismatch between {} and {}",
                a.display(),
                b.display()
            );
        }
        let llm_table = std::fs::read_to_string(out_a.join("llm_table.txt")).unwrap();
        assert!(llm_table.contains("phi4"));
        assert!(llm_table.contains("—"));
        let model_table = std::fs::read_to_string(out_a.join("model_table.txt")).unwrap();
        assert!(model_table.contains("FT_CM_SARC"));
    }

    #[test]
    fn misclassification_export_lists_exactly_the_errors() {
        let (dir, splits_dir, runs_dir, golds) = world();
        let preds = binary_preds("test_hinglish", &golds, 3);
        let cm = crate::metrics::confusion(&preds, &golds).unwrap();
        let bundle = MetricsBundle {
            accuracy: cm.accuracy().unwrap(),
            macro_f1: cm.macro_f1().unwrap(),
            confusion: cm,
            auprc: None,
        };
        fake_cell(
            &runs_dir,
            CellId::Strategy {
                id: StrategyId::NoFt,
            },
            &preds,
            Some(bundle),
        );
        let out = dir.path().join("report");
        emit_report(&runs_dir, &splits_dir, None, &out).unwrap();
        let csv = std::fs::read_to_string(out.join("misclassified_strategy_no_ft.csv")).unwrap();
        let rows: Vec<&str> = csv.lines().skip(1).filter(|l| !l.is_empty()).collect();
        assert_eq!(rows.len(), 3);
    }

    #[test]
    fn reference_deltas_match_cells() {
        let (dir, splits_dir, runs_dir, golds) = world();
        let preds = binary_preds("test_hinglish", &golds, 0);
        let cm = crate::metrics::confusion(&preds, &golds).unwrap();
        let bundle = MetricsBundle {
            accuracy: cm.accuracy().unwrap(),
            macro_f1: cm.macro_f1().unwrap(),
            confusion: cm,
            auprc: None,
        };
        fake_cell(
            &runs_dir,
            CellId::Strategy {
                id: StrategyId::FtCmSarc,
            },
            &preds,
            Some(bundle),
        );
        let reference: PublishedReference = serde_json::from_value(serde_json::json!({
            "strategies": {"FT_CM_SARC": {"accuracy": 0.83873, "macro_f1": 0.84}}
        }))
        .unwrap();
        let out = dir.path().join("report");
        emit_report(&runs_dir, &splits_dir, Some(&reference), &out).unwrap();
        let deltas: Vec<serde_json::Value> = serde_json::from_str(
            &std::fs::read_to_string(out.join("reference_delta.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(deltas.len(), 2);
        let acc = deltas.iter().find(|d| d["metric"] == "accuracy").unwrap();
        assert!((acc["ours"].as_f64().unwrap() - 1.0).abs() < 1e-12);
        assert!((acc["delta"].as_f64().unwrap() - (1.0 - 0.83873)).abs() < 1e-9);
    }

    #[test]
    fn empty_runs_dir_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            emit_report(
                &dir.path().join("runs"),
                &dir.path().join("splits"),
                None,
                &dir.path().join("out")
            )
            .unwrap_err(),
            ExperimentError::BadInput(_)
        ));
    }
}
