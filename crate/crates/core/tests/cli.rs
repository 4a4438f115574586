//! End-to-end CLI behavior: idempotent outputs, the translate/audit cycle
//! against a mock endpoint, comparison output, and exit codes.

mod common;

use std::path::Path;

use common::{run_cli, run_cli_env, snapshot_dir, write_sarcasm_corpus, MockServer};

fn toy_config(dir: &Path, extra: serde_json::Value) -> std::path::PathBuf {
    let mut config = serde_json::json!({
        "seed": 9,
        "data": {
            "sarcasm_en": "sarcasm_en.jsonl",
            "sarcasm_hinglish": "sarcasm_hi.jsonl",
            "splits_dir": "splits",
            "sarcasm_targets": {"train_per_class": 8, "finetune_per_class": 3, "test_per_class": 3}
        },
        "encoder": {"base_encoder_id": "synth:hidden=16,layers=1,heads=2,ffn=32,max_len=16,vocab=400,seed=3"},
        "training": {"batch_size": 8, "learning_rate": 0.005, "epochs": 2, "finetune_epochs": 1, "max_sequence_length": 16}
    });
    merge(&mut config, extra);
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn merge(base: &mut serde_json::Value, extra: serde_json::Value) {
    if let (Some(base_map), serde_json::Value::Object(extra_map)) = (base.as_object_mut(), extra) {
        for (key, value) in extra_map {
            match base_map.get_mut(&key) {
                Some(existing) if existing.is_object() && value.is_object() => {
                    merge(existing, value)
                }
                _ => {
                    base_map.insert(key, value);
                }
            }
        }
    }
}

fn setup_corpus(dir: &Path) {
    write_sarcasm_corpus(&dir.join("sarcasm_en.jsonl"), 16, 16, "en");
    write_sarcasm_corpus(&dir.join("sarcasm_hi.jsonl"), 16, 16, "hinglish");
}

#[test]
fn prepare_data_outputs_are_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    setup_corpus(dir.path());
    toy_config(dir.path(), serde_json::json!({}));

    let (code, _, stderr) = run_cli(dir.path(), &["--config", "config.json", "prepare-data"]);
    assert_eq!(code, 0, "{stderr}");
    let first = snapshot_dir(&dir.path().join("splits"));
    let (code, _, _) = run_cli(dir.path(), &["--config", "config.json", "prepare-data"]);
    assert_eq!(code, 0);
    let second = snapshot_dir(&dir.path().join("splits"));
    assert_eq!(first, second);
}

#[test]
fn training_outputs_are_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    setup_corpus(dir.path());
    toy_config(dir.path(), serde_json::json!({}));
    run_cli(dir.path(), &["--config", "config.json", "prepare-data"]);

    for out in ["ckpt_a", "ckpt_b"] {
        let (code, _, stderr) = run_cli(
            dir.path(),
            &["--config", "config.json", "train", "--split", "splits/train.jsonl", "--out", out],
        );
        assert_eq!(code, 0, "{stderr}");
    }
    assert_eq!(
        std::fs::read(dir.path().join("ckpt_a/encoder/weights.bin")).unwrap(),
        std::fs::read(dir.path().join("ckpt_b/encoder/weights.bin")).unwrap()
    );
    assert_eq!(
        std::fs::read(dir.path().join("ckpt_a/head.bin")).unwrap(),
        std::fs::read(dir.path().join("ckpt_b/head.bin")).unwrap()
    );
    assert_eq!(
        std::fs::read(dir.path().join("ckpt_a/training_log.csv")).unwrap(),
        std::fs::read(dir.path().join("ckpt_b/training_log.csv")).unwrap()
    );
}

fn echo_translator(_model: &str, prompt: &str) -> String {
    prompt
        .lines()
        .filter_map(|line| {
            let (num, text) = line.split_once(". ")?;
            num.parse::<usize>().ok()?;
            Some(format!("{num}. {text} हो गया\n"))
        })
        .collect()
}

#[test]
fn translate_reuses_the_store_and_stays_byte_identical() {
    let server = MockServer::start(echo_translator);
    let dir = tempfile::tempdir().unwrap();
    setup_corpus(dir.path());
    toy_config(
        dir.path(),
        serde_json::json!({
            "translation": {
                "endpoint": server.endpoint,
                "store": "cache/translations.jsonl",
                "batch_size": 5
            }
        }),
    );

    let (code, stdout, stderr) = run_cli(
        dir.path(),
        &["--config", "config.json", "translate", "--input", "sarcasm_en.jsonl", "--out", "translated.jsonl"],
    );
    assert_eq!(code, 0, "{stderr}");
    let summary: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(summary["total"], 32);
    assert_eq!(summary["counts"]["ok"], 32);
    let calls = server.request_count();
    assert!(calls > 0);
    let first = std::fs::read(dir.path().join("translated.jsonl")).unwrap();

    let (code, _, _) = run_cli(
        dir.path(),
        &["--config", "config.json", "translate", "--input", "sarcasm_en.jsonl", "--out", "translated.jsonl"],
    );
    assert_eq!(code, 0);
    assert_eq!(server.request_count(), calls, "store must be reused");
    assert_eq!(std::fs::read(dir.path().join("translated.jsonl")).unwrap(), first);
}

#[test]
fn audit_cycle_produces_statistics() {
    let server = MockServer::start(echo_translator);
    let dir = tempfile::tempdir().unwrap();
    setup_corpus(dir.path());
    toy_config(
        dir.path(),
        serde_json::json!({"translation": {"endpoint": server.endpoint, "store": "cache/t.jsonl"}}),
    );
    run_cli(
        dir.path(),
        &["--config", "config.json", "translate", "--input", "sarcasm_en.jsonl", "--out", "translated.jsonl"],
    );

    let (code, stdout, stderr) = run_cli(
        dir.path(),
        &["--config", "config.json", "audit", "--records", "translated.jsonl", "--sample", "20", "--out", "audit.csv"],
    );
    assert_eq!(code, 0, "{stderr}");
    let summary: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(summary["sampled"], 20);

    // fill the annotation columns: disagree on 3 rows, mark 2 unsatisfactory
    let sample = std::fs::read_to_string(dir.path().join("audit.csv")).unwrap();
    let mut filled = String::from("id,annotator_a,annotator_b,adjudicated\n");
    for (i, line) in sample.lines().skip(1).enumerate() {
        let id = line.split(',').next().unwrap();
        let (a, b, adj) = if i < 3 {
            ("satisfactory", "unsatisfactory", if i < 2 { "unsatisfactory" } else { "satisfactory" })
        } else {
            ("satisfactory", "satisfactory", "")
        };
        filled.push_str(&format!("{id},{a},{b},{adj}\n"));
    }
    std::fs::write(dir.path().join("annotations.csv"), filled).unwrap();

    let (code, stdout, stderr) = run_cli(
        dir.path(),
        &["--config", "config.json", "audit", "--records", "translated.jsonl", "--annotations", "annotations.csv"],
    );
    assert_eq!(code, 0, "{stderr}");
    let stats: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(stats["annotated"], 20);
    assert!((stats["raw_agreement"].as_f64().unwrap() - 17.0 / 20.0).abs() < 1e-12);
    assert!((stats["unsatisfactory_rate"].as_f64().unwrap() - 0.1).abs() < 1e-12);
}

#[test]
fn compare_prints_bootstrap_json() {
    let dir = tempfile::tempdir().unwrap();
    setup_corpus(dir.path());
    toy_config(dir.path(), serde_json::json!({}));
    run_cli(dir.path(), &["--config", "config.json", "prepare-data"]);
    run_cli(
        dir.path(),
        &["--config", "config.json", "train", "--split", "splits/train.jsonl", "--out", "ckpt"],
    );
    run_cli(
        dir.path(),
        &["--config", "config.json", "eval-model", "--checkpoint", "ckpt", "--test", "splits/test_hinglish.jsonl", "--out", "eval_a"],
    );

    let (code, stdout, stderr) = run_cli(
        dir.path(),
        &[
            "--config", "config.json", "compare",
            "--a", "eval_a", "--b", "eval_a",
            "--golds", "splits/test_hinglish.jsonl",
            "--iterations", "100",
        ],
    );
    assert_eq!(code, 0, "{stderr}");
    let result: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(result["n_iterations"], 100);
    assert_eq!(result["delta_mean"], 0.0);
    assert_eq!(result["significant"], false);
}

#[test]
fn missing_credential_is_an_external_service_error() {
    let dir = tempfile::tempdir().unwrap();
    setup_corpus(dir.path());
    toy_config(
        dir.path(),
        serde_json::json!({"translation": {"credential_env": "SARCBENCH_TEST_UNSET_CREDENTIAL"}}),
    );
    let (code, _, stderr) = run_cli_env(
        dir.path(),
        &["--config", "config.json", "translate", "--input", "sarcasm_en.jsonl", "--out", "t.jsonl"],
        &[],
    );
    assert_eq!(code, 3, "{stderr}");
    assert!(stderr.contains("external_service"));
}

#[test]
fn report_with_reference_emits_deltas() {
    let dir = tempfile::tempdir().unwrap();
    setup_corpus(dir.path());
    toy_config(dir.path(), serde_json::json!({}));
    run_cli(dir.path(), &["--config", "config.json", "prepare-data"]);
    run_cli(
        dir.path(),
        &["--config", "config.json", "train", "--split", "splits/train.jsonl", "--out", "ckpt"],
    );
    let (code, _, stderr) = run_cli(
        dir.path(),
        &[
            "--config", "config.json", "eval-model",
            "--checkpoint", "ckpt",
            "--test", "splits/test_hinglish.jsonl",
            "--out", "runs/default/strategy_no_ft",
            "--strategy", "NO_FT",
        ],
    );
    assert_eq!(code, 0, "{stderr}");
    std::fs::write(
        dir.path().join("reference.json"),
        serde_json::json!({
            "strategies": {"NO_FT": {"accuracy": 0.56868, "macro_f1": 0.47}}
        })
        .to_string(),
    )
    .unwrap();
    let (code, _, stderr) = run_cli(
        dir.path(),
        &["--config", "config.json", "report", "--reference", "reference.json"],
    );
    assert_eq!(code, 0, "{stderr}");
    let deltas: Vec<serde_json::Value> = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("runs/default/report/reference_delta.json"))
            .unwrap(),
    )
    .unwrap();
    assert_eq!(deltas.len(), 2);
    assert!(deltas.iter().all(|d| d["cell"] == "strategy_no_ft"));
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("config.json"), "{ not json").unwrap();
    let (code, _, stderr) = run_cli(dir.path(), &["--config", "config.json", "prepare-data"]);
    assert_eq!(code, 1);
    assert!(stderr.contains("usage"));
}
