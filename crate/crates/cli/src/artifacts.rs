//! Writers for the files each run leaves behind.

use std::fs;
use std::path::Path;

use mgr_core::config::RunConfig;
use mgr_core::metrics::ConfusionMatrix;
use mgr_core::{Error, Result};

pub const METRICS: &str = "metrics.csv";
pub const LOSS_TRACE: &str = "loss_trace.csv";
pub const PREDICTIONS: &str = "predictions.jsonl";
pub const CONFUSION: &str = "confusion.csv";
pub const RESOLVED_CONFIG: &str = "resolved_config.json";

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(Error::io(path))
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(r).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write(path, &csv_bytes(header, rows))
}

/// `metric,value` rows.
pub fn write_metrics(dir: &Path, metrics: &[(&str, f64)]) -> Result<()> {
    let rows: Vec<Vec<String>> = metrics
        .iter()
        .map(|(k, v)| vec![k.to_string(), v.to_string()])
        .collect();
    write_csv(&dir.join(METRICS), &["metric", "value"], &rows)
}

pub fn write_loss_trace(dir: &Path, trace: &[(usize, f64)]) -> Result<()> {
    let rows: Vec<Vec<String>> = trace
        .iter()
        .map(|(s, l)| vec![s.to_string(), l.to_string()])
        .collect();
    write_csv(&dir.join(LOSS_TRACE), &["step", "loss"], &rows)
}

/// Rows are actual classes, columns predicted classes.
pub fn write_confusion(dir: &Path, m: &ConfusionMatrix, names: &[String]) -> Result<()> {
    let mut header = vec!["actual"];
    header.extend(names.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = m
        .counts
        .chunks(m.num_classes)
        .zip(names)
        .map(|(row, name)| {
            std::iter::once(name.clone())
                .chain(row.iter().map(u64::to_string))
                .collect()
        })
        .collect();
    write_csv(&dir.join(CONFUSION), &header, &rows)
}

pub fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(&l);
        text.push('\n');
    }
    write(path, text.as_bytes())
}

pub fn write_resolved_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    write(&dir.join(RESOLVED_CONFIG), cfg.to_json().as_bytes())
}
