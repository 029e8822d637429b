mod common;

use std::fs;

use common::{mgr, read_metrics, read_rows, small_config, stage, stage_dir, write_config};

#[test]
fn usage_errors_exit_two() {
    assert_eq!(mgr(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(mgr(&["align-train", "--bogus"]).status.code(), Some(2));
    assert_eq!(mgr(&["--help"]).status.code(), Some(0));
}

#[test]
fn invalid_config_exits_three_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.align.tau = 0.0;
    let path = write_config(&cfg, &dir.path().join("bad.json"));
    let out = mgr(&["align-train", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("align.tau"), "{err}");

    let path = dir.path().join("typo.json");
    fs::write(&path, r#"{"align": {"taux": 0.1}}"#).unwrap();
    let out = mgr(&["zero-shot-eval", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("align.taux"));
}

#[test]
fn missing_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let path = write_config(&cfg, &dir.path().join("run.json"));
    stage("gen-synth", &path);
    let out = mgr(&["eval-mgr", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "), "{err}");
}

#[test]
fn missing_corpus_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let path = write_config(&cfg, &dir.path().join("run.json"));
    assert_eq!(
        mgr(&["align-train", "--config", path.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn stages_chain_through_shared_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let path = write_config(&cfg, &dir.path().join("run.json"));
    for command in [
        "gen-synth",
        "align-train",
        "zero-shot-eval",
        "finetune-cls",
        "eval-mgr",
        "train-emotion",
        "eval-emotion",
    ] {
        stage(command, &path);
        assert!(
            stage_dir(&cfg, command)
                .join(mgr_cli::RESOLVED_CONFIG)
                .is_file(),
            "{command}"
        );
    }
    let ckpt = cfg.paths.checkpoint_dir();
    for name in [
        mgr_cli::ALIGN_CHECKPOINT,
        mgr_cli::MGR_CHECKPOINT,
        mgr_cli::EMOTION_CHECKPOINT,
    ] {
        assert!(ckpt.join(name).is_file(), "{name}");
    }

    let zs = read_metrics(&stage_dir(&cfg, "zero-shot-eval"));
    for key in [
        "top1",
        "top5",
        "nearest_centroid_top1",
        "confusable_top1",
        "nearest_centroid_confusable_top1",
    ] {
        let v = zs[key];
        assert!((0.0..=100.0).contains(&v), "{key} = {v}");
    }

    let trace = read_rows(&stage_dir(&cfg, "align-train").join(mgr_cli::LOSS_TRACE));
    assert_eq!(trace[0], ["step", "loss"]);
    assert!(trace.len() > 2);

    let eval = stage_dir(&cfg, "eval-mgr");
    let confusion = read_rows(&eval.join(mgr_cli::CONFUSION));
    assert_eq!(confusion.len(), 1 + cfg.synth.num_classes);
    let total: usize = confusion[1..]
        .iter()
        .flat_map(|r| r[1..].iter().map(|c| c.parse::<usize>().unwrap()))
        .sum();
    let predictions = fs::read_to_string(eval.join(mgr_cli::PREDICTIONS)).unwrap();
    assert_eq!(total, predictions.lines().count());
    let first: serde_json::Value =
        serde_json::from_str(predictions.lines().next().unwrap()).unwrap();
    let probs = first["probs"].as_array().unwrap();
    assert_eq!(probs.len(), cfg.synth.num_classes);
    let sum: f64 = probs.iter().map(|p| p.as_f64().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-4);

    let emotion = read_metrics(&stage_dir(&cfg, "eval-emotion"));
    assert!((0.0..=100.0).contains(&emotion["top1"]));
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let path = write_config(&cfg, &dir.path().join("run.json"));
    let out = mgr(&[
        "gen-synth",
        "--config",
        path.to_str().unwrap(),
        "--seed",
        "9",
    ]);
    assert!(out.status.success());
    let resolved = fs::read_to_string(cfg.paths.corpus.join(mgr_cli::RESOLVED_CONFIG)).unwrap();
    let resolved = mgr_core::config::RunConfig::from_json(&resolved).unwrap();
    assert_eq!(resolved.seed, 9);
}

#[test]
fn ablate_and_modality_compare_report_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let path = write_config(&cfg, &dir.path().join("run.json"));
    for command in [
        "gen-synth",
        "align-train",
        "finetune-cls",
        "ablate",
        "modality-compare",
    ] {
        stage(command, &path);
    }
    let rows = read_rows(&stage_dir(&cfg, "ablate").join(mgr_cli::METRICS));
    assert_eq!(rows[0], ["setting", "top1", "top5"]);
    let names: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, mgr_core::pipeline::ABLATION_ROWS);

    let rows = read_rows(&stage_dir(&cfg, "modality-compare").join(mgr_cli::METRICS));
    assert_eq!(rows[0], ["modality", "top1"]);
    let names: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(
        names,
        [
            "visual_representation",
            "probability_vector",
            "textual_prediction"
        ]
    );
}
