//! Result records (JSON lines), manifests and CSV tables.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// One line of a results file. Holds no timestamps, so identical configs
/// give identical records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    /// sha256 of the canonical config this record was computed from.
    pub config_hash: String,
    pub operation: String,
    /// Graph, process, operation parameters and sample count.
    pub params: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_point: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_values: Option<Value>,
    pub seed: u64,
    pub version: String,
    pub inconclusive: bool,
    pub result: Value,
}

impl ResultRecord {
    pub fn new(cfg: &ExperimentConfig, result: Value, inconclusive: bool) -> Self {
        ResultRecord {
            config_hash: cfg.hash(),
            operation: cfg.operation.name().to_string(),
            params: json!({
                "graph": cfg.graph,
                "process": cfg.process,
                "operation": cfg.operation,
                "n": cfg.run.n,
            }),
            grid_point: None,
            grid_values: None,
            seed: cfg.run.seed,
            version: VERSION.to_string(),
            inconclusive,
            result,
        }
    }
}

/// Everything needed to reproduce a run, plus the only timing data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_file: PathBuf,
    /// One entry per record, in record order.
    pub configs: Vec<ManifestEntry>,
    pub seed: u64,
    pub version: String,
    pub outputs: Vec<PathBuf>,
    pub started_unix_seconds: u64,
    pub wall_time_seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub config: Value,
    pub config_hash: String,
}

impl ManifestEntry {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        ManifestEntry {
            config: serde_json::to_value(cfg).expect("config serializes"),
            config_hash: cfg.hash(),
        }
    }
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::File::create(path)
        .and_then(|mut f| f.write_all(contents))
        .map_err(|e| CliError::io(path, e))
}

pub fn write_records(path: &Path, records: &[ResultRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Scalar leaves of a JSON value keyed by dotted path. Arrays are skipped:
/// a sweep CSV row holds one number per column.
fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        Value::Array(_) => {}
        Value::Null => out.push((prefix.to_string(), String::new())),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// One row per sweep record: grid point, seed, swept values, then every
/// scalar in the result. Columns are the union over records in order of
/// first appearance.
pub fn sweep_csv(records: &[ResultRecord]) -> Result<Vec<u8>> {
    let rows: Vec<Vec<(String, String)>> = records
        .iter()
        .map(|r| {
            let mut row = vec![
                ("grid_point".to_string(), r.grid_point.map_or_else(String::new, |i| i.to_string())),
                ("seed".to_string(), r.seed.to_string()),
            ];
            if let Some(values) = &r.grid_values {
                flatten("", values, &mut row);
            }
            flatten("result", &r.result, &mut row);
            row
        })
        .collect();
    let mut columns: Vec<String> = Vec::new();
    for row in &rows {
        for (k, _) in row {
            if !columns.contains(k) {
                columns.push(k.clone());
            }
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&columns)?;
    for row in &rows {
        let cells = columns.iter().map(|c| {
            row.iter()
                .find(|(k, _)| k == c)
                .map_or("", |(_, v)| v.as_str())
        });
        w.write_record(cells)?;
    }
    w.into_inner().map_err(|e| CliError::Csv(e.into_error().into()))
}
