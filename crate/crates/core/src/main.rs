//! Command-line entry point. Every subcommand is a pure function of the
//! config file, flags, and input files; resolved config and seed are echoed
//! to stderr for reproducibility. Exit codes: 0 success, 1 usage error,
//! 2 data error, 3 external-service error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, Parser, Subcommand};
use serde_json::json;

use sarcbench::classifier::{self, ModelCheckpoint, PredictionSet};
use sarcbench::config::{ConfigError, ToolkitConfig};
use sarcbench::corpus::{
    self, balanced_undersample, derive_parallel_split, make_sarcasm_splits,
    make_sentiment_finetune, DatasetSplit, SplitManifest, SplitName,
};
use sarcbench::experiments::{
    self, report::emit_report, report::PublishedReference, run_llm_grid, run_size_ablation,
    CellId, LlmGridOptions, StrategyId, StrategySpec,
};
use sarcbench::http::{HttpInferenceClient, HttpTranslationClient};
use sarcbench::llm_eval::{PromptMode, ResponseCache};
use sarcbench::metrics::paired_bootstrap_sized;
use sarcbench::synthgen::{
    self, apply_audit, audit_statistics, read_audit_csv, sample_for_audit, translate_corpus,
    write_audit_csv, TranslationStatus,
};

#[derive(Parser)]
#[command(name = "sarcbench", version, about = "Sarcasm benchmark toolkit for code-mixed text")]
struct Cli {
    /// JSON config file; missing file means built-in defaults
    #[arg(long, global = true, default_value = "sarcbench.json")]
    config: PathBuf,
    /// Override a config value, e.g. --set training.epochs=5
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Override the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build balanced train/fine-tune/test splits and their manifests
    PrepareData,
    /// Translate a dataset into code-mixed counterparts via the endpoint
    Translate {
        /// Source JSONL dataset
        #[arg(long)]
        input: PathBuf,
        /// Output JSONL of translation records
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample translations for audit or compute audit statistics
    Audit {
        /// Translation records JSONL
        #[arg(long)]
        records: PathBuf,
        /// Draw an audit sample of this size
        #[arg(long)]
        sample: Option<usize>,
        /// Output CSV for the audit sample
        #[arg(long)]
        out: Option<PathBuf>,
        /// Filled-in annotation CSV to score
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Train the classifier on a split
    Train {
        #[arg(long)]
        split: PathBuf,
        /// Checkpoint output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Sequentially fine-tune a checkpoint on another split
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a test split
    EvalModel {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Output directory for predictions and metrics
        #[arg(long)]
        out: PathBuf,
        /// Tag the result as a named strategy cell
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Run the LLM grid (models × modes × test splits)
    EvalLlm {
        /// Comma-separated model ids (default: config)
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        /// Comma-separated modes: zero_shot, few_shot (default: both)
        #[arg(long, value_delimiter = ',')]
        modes: Vec<String>,
        /// Test split files (default: standard split layout)
        #[arg(long = "test", value_name = "PATH")]
        tests: Vec<PathBuf>,
        #[arg(long, default_value = "default")]
        run_id: String,
    },
    /// Paired bootstrap comparison of two prediction sets
    Compare {
        /// Prediction file or run directory for system A
        #[arg(long)]
        a: PathBuf,
        /// Prediction file or run directory for system B
        #[arg(long)]
        b: PathBuf,
        /// Gold split JSONL
        #[arg(long)]
        golds: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        resample_size: Option<usize>,
    },
    /// Training-size ablation for one strategy
    Ablate {
        #[arg(long)]
        strategy: String,
        /// Comma-separated subset sizes (default: config grid + full)
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        #[arg(long, default_value = "default")]
        run_id: String,
    },
    /// Emit tables, plots, and exports for a finished run
    Report {
        #[arg(long, default_value = "default")]
        run_id: String,
        /// Report output directory (default: <runs>/<run-id>/report)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Published reference numbers to compare against
        #[arg(long)]
        reference: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    External(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::External(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::External(_) => "external_service",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::External(m) => m,
        }
    }
}

macro_rules! from_data_error {
    ($($ty:ty),+) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Data(e.to_string())
            }
        })+
    };
}

from_data_error!(
    corpus::CorpusError,
    classifier::ClassifierError,
    synthgen::SynthgenError,
    sarcbench::llm_eval::LlmEvalError,
    sarcbench::metrics::MetricsError,
    experiments::ExperimentError
);

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = e.print();
                let _ = Cli::command().print_help();
                std::process::exit(1);
            }
            // --help / --version
            let _ = e.print();
            std::process::exit(0);
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!(
                "{}",
                json!({"error": e.message(), "kind": e.kind(), "exit_code": e.exit_code()})
            );
            std::process::exit(e.exit_code());
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = ToolkitConfig::load(&cli.config, &cli.overrides)?;
    let seed = cli.seed.unwrap_or(config.seed);
    eprintln!(
        "resolved config: {}",
        serde_json::to_string(&config).expect("config serializes")
    );
    eprintln!("seed: {seed}");
    match cli.command {
        Command::PrepareData => prepare_data(&config, seed),
        Command::Translate { input, out } => translate(&config, seed, &input, &out),
        Command::Audit {
            records,
            sample,
            out,
            annotations,
        } => audit(&config, seed, &records, sample, out.as_deref(), annotations.as_deref()),
        Command::Train { split, out } => train(&config, seed, &split, &out),
        Command::Finetune {
            checkpoint,
            split,
            out,
        } => finetune(&config, seed, &checkpoint, &split, &out),
        Command::EvalModel {
            checkpoint,
            test,
            out,
            strategy,
        } => eval_model(seed, &checkpoint, &test, &out, strategy.as_deref()),
        Command::EvalLlm {
            models,
            modes,
            tests,
            run_id,
        } => eval_llm(&config, seed, &models, &modes, &tests, &run_id),
        Command::Compare {
            a,
            b,
            golds,
            iterations,
            resample_size,
        } => compare(&config, seed, &a, &b, &golds, iterations, resample_size),
        Command::Ablate {
            strategy,
            sizes,
            run_id,
        } => ablate(&config, seed, &strategy, &sizes, &run_id),
        Command::Report {
            run_id,
            out,
            reference,
        } => report(&config, &run_id, out.as_deref(), reference.as_deref()),
    }
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Data(format!("{}: {e}", parent.display())))?;
        }
    }
    Ok(())
}

fn emit(value: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&value).expect("json"));
}

fn prepare_data(config: &ToolkitConfig, seed: u64) -> Result<(), CliError> {
    let data = &config.data;
    let sarcasm_path = data.sarcasm_en.as_ref().ok_or_else(|| {
        CliError::Usage("config data.sarcasm_en must point to the sarcasm dataset".into())
    })?;
    let splits_dir = &data.splits_dir;
    std::fs::create_dir_all(splits_dir)
        .map_err(|e| CliError::Data(format!("{}: {e}", splits_dir.display())))?;

    let corpus_records = corpus::load_sarcasm_headlines(sarcasm_path)?;
    let balanced = balanced_undersample(&corpus_records, seed)?;
    let splits = make_sarcasm_splits(&balanced, seed, &data.sarcasm_targets)?;
    let train = &splits[&SplitName::Train];
    let finetune_en = &splits[&SplitName::FineTuneEnglish];
    let test_en = &splits[&SplitName::Test];
    train.save_jsonl(&splits_dir.join("train.jsonl"))?;
    finetune_en.save_jsonl(&splits_dir.join("finetune_english.jsonl"))?;
    test_en.save_jsonl(&splits_dir.join("test_english.jsonl"))?;

    let mut manifest_splits = vec![train, finetune_en, test_en];
    let mut written = vec![
        splits_dir.join("train.jsonl"),
        splits_dir.join("finetune_english.jsonl"),
        splits_dir.join("test_english.jsonl"),
    ];

    let hinglish_twins = match &data.sarcasm_hinglish {
        Some(path) => {
            let counterparts = corpus::load_sarcasm_headlines(path)?;
            let finetune_hi =
                derive_parallel_split(finetune_en, &counterparts, SplitName::FineTuneHinglish)?;
            let test_hi = derive_parallel_split(test_en, &counterparts, SplitName::Test)?;
            finetune_hi.save_jsonl(&splits_dir.join("finetune_hinglish.jsonl"))?;
            test_hi.save_jsonl(&splits_dir.join("test_hinglish.jsonl"))?;
            written.push(splits_dir.join("finetune_hinglish.jsonl"));
            written.push(splits_dir.join("test_hinglish.jsonl"));
            Some(finetune_hi)
        }
        None => None,
    };
    if let Some(finetune_hi) = &hinglish_twins {
        manifest_splits.insert(2, finetune_hi);
    }
    let manifest = SplitManifest::from_splits(manifest_splits.into_iter());
    manifest.save(&splits_dir.join("manifest.json"))?;
    written.push(splits_dir.join("manifest.json"));

    if let Some(path) = &data.sentiment_en {
        let sentiment = corpus::load_sentiment_tweets(path)?;
        let finetune_en = make_sentiment_finetune(
            &sentiment,
            seed,
            &data.sentiment_targets,
            SplitName::FineTuneEnglish,
        )?;
        finetune_en.save_jsonl(&splits_dir.join("sentiment_finetune_english.jsonl"))?;
        written.push(splits_dir.join("sentiment_finetune_english.jsonl"));
        let mut sentiment_splits = vec![finetune_en];
        if let Some(hi_path) = &data.sentiment_hinglish {
            let counterparts = corpus::load_sentiment_tweets(hi_path)?;
            let finetune_hi = derive_parallel_split(
                &sentiment_splits[0],
                &counterparts,
                SplitName::FineTuneHinglish,
            )?;
            finetune_hi.save_jsonl(&splits_dir.join("sentiment_finetune_hinglish.jsonl"))?;
            written.push(splits_dir.join("sentiment_finetune_hinglish.jsonl"));
            sentiment_splits.push(finetune_hi);
        }
        let manifest = SplitManifest::from_splits(sentiment_splits.iter());
        manifest.save(&splits_dir.join("sentiment_manifest.json"))?;
        written.push(splits_dir.join("sentiment_manifest.json"));
    }

    emit(json!({
        "written": written,
        "counts": manifest.counts,
    }));
    Ok(())
}

fn translate(
    config: &ToolkitConfig,
    _seed: u64,
    input: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let section = &config.translation;
    let credential = match &section.credential_env {
        Some(name) => Some(std::env::var(name).map_err(|_| {
            CliError::External(format!("credential environment variable `{name}` is not set"))
        })?),
        None => None,
    };
    let records = corpus::load_labeled(input)?;
    let sentences: Vec<(String, String)> = records
        .into_iter()
        .map(|r| (r.id, r.text))
        .collect();
    let client = HttpTranslationClient::new(
        section.endpoint.clone(),
        section.model.clone(),
        section.response_field.clone(),
        credential,
    );
    ensure_parent(&section.store)?;
    ensure_parent(out)?;
    let results = translate_corpus(
        &client,
        &sentences,
        &section.store,
        section.batch_size,
        &section.translate_options(),
    )?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for record in &results {
        let key = match record.status {
            TranslationStatus::Ok => "ok",
            TranslationStatus::Refused => "refused",
            TranslationStatus::Error => "error",
            TranslationStatus::Manual => "manual",
        };
        *counts.entry(key).or_insert(0) += 1;
    }
    synthgen::append_translation_records(&ensure_truncated(out)?, &results)?;
    emit(json!({
        "out": out,
        "store": section.store,
        "counts": counts,
        "total": results.len(),
    }));
    Ok(())
}

fn ensure_truncated(path: &Path) -> Result<PathBuf, CliError> {
    std::fs::write(path, "").map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(path.to_path_buf())
}

fn audit(
    _config: &ToolkitConfig,
    seed: u64,
    records_path: &Path,
    sample: Option<usize>,
    out: Option<&Path>,
    annotations: Option<&Path>,
) -> Result<(), CliError> {
    let records = synthgen::load_translation_records(records_path)?;
    match (sample, annotations) {
        (Some(n), None) => {
            let sampled = sample_for_audit(&records, n, seed)?;
            let out = out
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from("audit_sample.csv"));
            ensure_parent(&out)?;
            write_audit_csv(&out, &sampled)?;
            emit(json!({"out": out, "sampled": sampled.len()}));
            Ok(())
        }
        (None, Some(path)) => {
            let entries = read_audit_csv(path)?;
            let merged = apply_audit(&records, &entries)?;
            let annotated: Vec<_> = merged.into_iter().filter(|r| r.audit.is_some()).collect();
            let stats = audit_statistics(&annotated)?;
            emit(json!({
                "annotated": annotated.len(),
                "raw_agreement": stats.raw_agreement,
                "unsatisfactory_rate": stats.unsatisfactory_rate,
            }));
            Ok(())
        }
        _ => Err(CliError::Usage(
            "audit needs exactly one of --sample N or --annotations FILE".into(),
        )),
    }
}

fn load_split_cli(path: &Path) -> Result<DatasetSplit, CliError> {
    Ok(experiments::load_split(path)?)
}

fn train(config: &ToolkitConfig, seed: u64, split: &Path, out: &Path) -> Result<(), CliError> {
    let split = load_split_cli(split)?;
    let task = split
        .task()
        .ok_or_else(|| CliError::Data("split is empty".into()))?;
    let classifier_config = config.training.classifier_config(
        &config.encoder.base_encoder_id,
        task.num_labels(),
        seed,
    );
    let run = classifier::train(&classifier_config, &split)?;
    run.checkpoint.save(out)?;
    classifier::write_training_log(&out.join("training_log.csv"), &run.epoch_losses)?;
    emit(json!({
        "checkpoint": out,
        "provenance": run.checkpoint.provenance,
        "first_epoch_loss": run.epoch_losses.first(),
        "final_epoch_loss": run.epoch_losses.last(),
    }));
    Ok(())
}

fn finetune(
    config: &ToolkitConfig,
    seed: u64,
    checkpoint: &Path,
    split: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let checkpoint = ModelCheckpoint::load(checkpoint)?;
    let split = load_split_cli(split)?;
    let task = split
        .task()
        .ok_or_else(|| CliError::Data("split is empty".into()))?;
    let mut stage_config = config.training.classifier_config(
        &config.encoder.base_encoder_id,
        task.num_labels(),
        seed,
    );
    if let Some(epochs) = config.training.finetune_epochs {
        stage_config.epochs = epochs;
    }
    let run = classifier::sequential_fine_tune(&checkpoint, &split, &stage_config)?;
    run.checkpoint.save(out)?;
    classifier::write_training_log(&out.join("training_log.csv"), &run.epoch_losses)?;
    emit(json!({
        "checkpoint": out,
        "provenance": run.checkpoint.provenance,
        "head_labels": run.checkpoint.head_spec().num_labels,
        "final_epoch_loss": run.epoch_losses.last(),
    }));
    Ok(())
}

fn eval_model(
    seed: u64,
    checkpoint: &Path,
    test: &Path,
    out: &Path,
    strategy: Option<&str>,
) -> Result<(), CliError> {
    let checkpoint = ModelCheckpoint::load(checkpoint)?;
    let split = load_split_cli(test)?;
    let dataset = test
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("test")
        .to_string();
    let preds = classifier::predict(&checkpoint, &split.records, &dataset)?;
    let bundle = experiments::classifier_metrics(&preds, &split)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    let predictions_path = out.join("predictions.json");
    preds
        .save(&predictions_path)
        .map_err(|e| CliError::Data(format!("{}: {e}", predictions_path.display())))?;
    let metrics_path = out.join("metrics.json");
    std::fs::write(
        &metrics_path,
        serde_json::to_string_pretty(&bundle).expect("metrics serialize"),
    )
    .map_err(|e| CliError::Data(format!("{}: {e}", metrics_path.display())))?;
    if let Some(name) = strategy {
        let id = StrategyId::parse(name)
            .ok_or_else(|| CliError::Usage(format!("unknown strategy `{name}`")))?;
        let result = experiments::ExperimentResult {
            cell: CellId::Strategy { id },
            seed,
            metrics: Some(bundle.clone()),
            error: None,
            artifacts: experiments::ArtifactPaths {
                dir: out.to_path_buf(),
                predictions: predictions_path,
                metrics: metrics_path,
                checkpoint: None,
            },
        };
        std::fs::write(
            out.join("result.json"),
            serde_json::to_string_pretty(&result).expect("result serialize"),
        )
        .map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    }
    emit(serde_json::to_value(&bundle).expect("metrics serialize"));
    Ok(())
}

fn eval_llm(
    config: &ToolkitConfig,
    seed: u64,
    models: &[String],
    modes: &[String],
    tests: &[PathBuf],
    run_id: &str,
) -> Result<(), CliError> {
    let models: Vec<String> = if models.is_empty() {
        config.llm.models.clone()
    } else {
        models.to_vec()
    };
    let modes: Vec<PromptMode> = if modes.is_empty() {
        vec![PromptMode::ZeroShot, PromptMode::FewShot]
    } else {
        modes
            .iter()
            .map(|m| match m.as_str() {
                "zero_shot" | "zero-shot" => Ok(PromptMode::ZeroShot),
                "few_shot" | "few-shot" => Ok(PromptMode::FewShot),
                other => Err(CliError::Usage(format!("unknown mode `{other}`"))),
            })
            .collect::<Result<_, _>>()?
    };
    let tests: Vec<PathBuf> = if tests.is_empty() {
        ["test_english.jsonl", "test_hinglish.jsonl"]
            .iter()
            .map(|name| config.data.splits_dir.join(name))
            .filter(|p| p.is_file())
            .collect()
    } else {
        tests.to_vec()
    };
    if tests.is_empty() {
        return Err(CliError::Usage(
            "no test splits found; run prepare-data or pass --test".into(),
        ));
    }

    let pool_path = config.llm.fewshot_pool_path(&config.data.splits_dir);
    let pool = if modes.contains(&PromptMode::FewShot) && pool_path.is_file() {
        Some(experiments::load_split(&pool_path)?)
    } else {
        None
    };
    ensure_parent(&config.llm.cache)?;
    let cache = ResponseCache::open(&config.llm.cache)?;
    let client = HttpInferenceClient::new(
        config.llm.endpoint.clone(),
        config.llm.response_field.clone(),
    )
    .with_temperature(config.llm.temperature);
    let opts = LlmGridOptions {
        client: &client,
        cache: &cache,
        eval: config.llm.eval_options(),
        fewshot_pool: pool.as_ref(),
        k_per_class: config.llm.fewshot_k_per_class,
        policy: config.llm.unparseable_policy,
        seed,
    };
    let out_dir = config.experiments.runs_dir.join(run_id);
    let results = run_llm_grid(&models, &modes, &tests, &opts, &out_dir)?;
    let completed = results.iter().filter(|r| r.metrics.is_some()).count();
    let cells: Vec<serde_json::Value> = results
        .iter()
        .map(|r| {
            json!({
                "cell": r.cell.dir_name(),
                "accuracy": r.metrics.as_ref().map(|m| m.accuracy),
                "macro_f1": r.metrics.as_ref().map(|m| m.macro_f1),
                "error": r.error,
            })
        })
        .collect();
    emit(json!({
        "run_dir": out_dir,
        "cells": cells,
        "completed": completed,
        "failed": results.len() - completed,
    }));
    Ok(())
}

fn load_predictions(path: &Path) -> Result<PredictionSet, CliError> {
    let file = if path.is_dir() {
        path.join("predictions.json")
    } else {
        path.to_path_buf()
    };
    PredictionSet::load(&file).map_err(|e| CliError::Data(format!("{}: {e}", file.display())))
}

fn compare(
    config: &ToolkitConfig,
    seed: u64,
    a: &Path,
    b: &Path,
    golds: &Path,
    iterations: Option<usize>,
    resample_size: Option<usize>,
) -> Result<(), CliError> {
    let preds_a = load_predictions(a)?;
    let preds_b = load_predictions(b)?;
    let golds = load_split_cli(golds)?;
    let iterations = iterations.unwrap_or(config.experiments.bootstrap_iterations);
    let resample = resample_size.or(config.experiments.bootstrap_resample_size);
    let result = paired_bootstrap_sized(&preds_a, &preds_b, &golds, iterations, resample, seed)?;
    emit(serde_json::to_value(&result).expect("result serialize"));
    Ok(())
}

fn ablate(
    config: &ToolkitConfig,
    seed: u64,
    strategy: &str,
    sizes: &[usize],
    run_id: &str,
) -> Result<(), CliError> {
    let id = StrategyId::parse(strategy)
        .ok_or_else(|| CliError::Usage(format!("unknown strategy `{strategy}`")))?;
    let spec = StrategySpec::from_config(config, id, seed);
    let mut sizes: Vec<usize> = if sizes.is_empty() {
        config.experiments.ablation_sizes.clone()
    } else {
        sizes.to_vec()
    };
    let full = load_split_cli(&spec.train_split)?.len();
    if sizes.last().is_none_or(|&last| last < full) {
        sizes.push(full);
    }
    let out_dir = config.experiments.runs_dir.join(run_id);
    let points = run_size_ablation(&spec, &sizes, seed, &out_dir)?;
    emit(json!({
        "strategy": id.as_str(),
        "points": points,
        "run_dir": out_dir,
    }));
    Ok(())
}

fn report(
    config: &ToolkitConfig,
    run_id: &str,
    out: Option<&Path>,
    reference: Option<&Path>,
) -> Result<(), CliError> {
    let runs_dir = config.experiments.runs_dir.join(run_id);
    let out_dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| runs_dir.join("report"));
    let reference_path = reference
        .map(Path::to_path_buf)
        .or_else(|| config.experiments.reference_results.clone());
    let reference = reference_path
        .map(|p| PublishedReference::load(&p))
        .transpose()?;
    let bundle = emit_report(&runs_dir, &config.data.splits_dir, reference.as_ref(), &out_dir)?;
    emit(json!({
        "report_dir": out_dir,
        "files": bundle.files,
    }));
    Ok(())
}
