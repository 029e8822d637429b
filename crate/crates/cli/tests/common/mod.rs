#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mgr_core::config::RunConfig;

pub const SUBCOMMANDS: [&str; 9] = [
    "gen-synth",
    "align-train",
    "zero-shot-eval",
    "finetune-cls",
    "eval-mgr",
    "train-emotion",
    "eval-emotion",
    "ablate",
    "modality-compare",
];

pub fn mgr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgr"))
        .args(args)
        .output()
        .expect("mgr binary runs")
}

/// Runs `mgr <command> --config <config>` and panics with stderr on failure.
pub fn stage(command: &str, config: &Path) {
    let out = mgr(&[command, "--config", config.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{command} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// A configuration small enough for every subcommand to finish in seconds.
pub fn small_config(root: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.paths.corpus = root.join("corpus");
    cfg.paths.out = root.join("out");
    cfg.synth.num_classes = 6;
    cfg.synth.clips_per_class = 40;
    cfg.synth.visual_dim = 16;
    cfg.synth.text_dim = 16;
    cfg.synth.confusable_pairs = vec![[0, 1]];
    cfg.align.embed_dim = 32;
    cfg.align.epochs = 2;
    cfg.finetune.hidden = 32;
    cfg.finetune.epochs = 2;
    cfg.emotion.embed_dim = 16;
    cfg.emotion.ffn_hidden = 32;
    cfg.emotion.epochs = 1;
    cfg
}

pub fn write_config(cfg: &RunConfig, path: &Path) -> PathBuf {
    fs::write(path, cfg.to_json()).unwrap();
    path.to_path_buf()
}

pub fn stage_dir(cfg: &RunConfig, command: &str) -> PathBuf {
    if command == "gen-synth" {
        cfg.paths.corpus.clone()
    } else {
        cfg.paths.out.join(command)
    }
}

pub fn read_metrics(dir: &Path) -> BTreeMap<String, f64> {
    let mut rdr = csv::Reader::from_path(dir.join(mgr_cli::METRICS)).unwrap();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[1].parse().unwrap())
        })
        .collect()
}

/// Rows of a CSV file, header included.
pub fn read_rows(path: &Path) -> Vec<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .unwrap();
    rdr.records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

/// Every file below `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(
                    path.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    files
}
