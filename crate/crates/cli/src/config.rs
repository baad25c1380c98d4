//! Experiment files are TOML with the sections `[graph]`, `[process]`,
//! `[operation]`, `[run]` and, for `percolab sweep`, `[sweep]`.

use std::path::{Path, PathBuf};

use percolab_core::graph::{GraphBall, GraphSpec};
use percolab_core::percolation::Process;
use percolab_core::rng::derive_seed;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::ops::Operation;

/// Output directory used when neither `--out` nor `run.output_dir` is given.
pub const OUTPUT_DIR_ENV: &str = "PERCOLAB_OUTPUT_DIR";
const DEFAULT_OUTPUT_DIR: &str = "percolab-out";

const SECTIONS: [&str; 5] = ["graph", "process", "operation", "run", "sweep"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    /// Samples, walks, thinnings or path pairs, depending on the operation.
    pub n: u64,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Stem of the output files; defaults to the config file's stem.
    #[serde(default)]
    pub name: Option<String>,
}

/// One fully specified experiment. A sweep expands into one of these per
/// grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub graph: GraphSpec,
    pub process: Process,
    pub operation: Operation,
    pub run: RunSection,
}

impl ExperimentConfig {
    /// Compact JSON with object keys sorted. Floats use the shortest
    /// representation that round-trips.
    pub fn canonical(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("config serializes"))
    }

    pub fn hash(&self) -> String {
        config_hash(&self.canonical())
    }

    pub fn build_ball(&self) -> Result<GraphBall> {
        GraphBall::build(&self.graph).map_err(|e| CliError::from_core("graph", e))
    }

    /// Everything checkable without running the operation.
    pub fn validate(&self) -> Result<GraphBall> {
        if self.run.n == 0 {
            return Err(CliError::validation("run.n", "must be at least 1"));
        }
        self.process
            .validate()
            .map_err(|e| CliError::from_core("process", e))?;
        let ball = self.build_ball()?;
        self.operation.check(&ball, &self.process)?;
        Ok(ball)
    }
}

pub fn canonical_json(v: &Value) -> String {
    // serde_json maps are ordered by key, so this is already canonical.
    serde_json::to_string(v).expect("json value serializes")
}

pub fn config_hash(canonical: &str) -> String {
    Sha256::digest(canonical.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// A parsed config file before it is split into grid points.
#[derive(Clone, Debug)]
pub struct ConfigFile {
    pub path: PathBuf,
    pub table: toml::Table,
}

impl ConfigFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let table: toml::Table = toml::from_str(&text)
            .map_err(|e| CliError::validation(path.display().to_string(), e.message().to_string()))?;
        if let Some(k) = table.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            return Err(CliError::validation(k.clone(), "unknown section"));
        }
        Ok(ConfigFile {
            path: path.to_path_buf(),
            table,
        })
    }

    pub fn has_sweep(&self) -> bool {
        self.table.contains_key("sweep")
    }

    pub fn stem(&self, cfg: &ExperimentConfig) -> String {
        cfg.run.name.clone().unwrap_or_else(|| {
            self.path
                .file_stem()
                .map_or_else(|| "experiment".into(), |s| s.to_string_lossy().into_owned())
        })
    }

    pub fn single(&self) -> Result<ExperimentConfig> {
        if self.has_sweep() {
            return Err(CliError::validation("sweep", "grid configs run with `percolab sweep`"));
        }
        parse_point(&self.table)
    }

    /// Expands `[sweep]` into its grid points. Axes are taken in key order
    /// and the last axis varies fastest.
    pub fn grid(&self) -> Result<Vec<GridPoint>> {
        let Some(sweep) = self.table.get("sweep") else {
            return Err(CliError::validation("sweep", "missing section"));
        };
        let toml::Value::Table(axes) = sweep else {
            return Err(CliError::validation("sweep", "must be a table of value lists"));
        };
        // `graph.radius = [..]` parses as a nested table.
        let mut flat = Vec::new();
        for (key, v) in axes {
            match v {
                toml::Value::Table(inner) => {
                    flat.extend(inner.iter().map(|(f, v)| (format!("{key}.{f}"), v.clone())));
                }
                v => flat.push((key.clone(), v.clone())),
            }
        }
        if flat.is_empty() || flat.len() > 2 {
            return Err(CliError::validation(
                "sweep",
                format!("grid over one or two parameters, got {}", flat.len()),
            ));
        }
        let mut resolved = Vec::new();
        for (key, values) in flat {
            let path = format!("sweep.{key}");
            let toml::Value::Array(values) = values else {
                return Err(CliError::validation(path, "must be a list of values"));
            };
            if values.is_empty() {
                return Err(CliError::validation(path, "empty grid"));
            }
            let owner = self.locate(&key)?;
            resolved.push((key, owner, values));
        }
        let base = {
            let mut t = self.table.clone();
            t.remove("sweep");
            t
        };
        let base_seed = parse_point(&base)?.run.seed;

        let mut points = Vec::new();
        let mut index = vec![0usize; resolved.len()];
        loop {
            let mut table = base.clone();
            let mut values = serde_json::Map::new();
            for ((key, (section, field), grid), &i) in resolved.iter().zip(&index) {
                let sec = table
                    .get_mut(section.as_str())
                    .and_then(|v| v.as_table_mut())
                    .expect("located sections exist");
                sec.insert(field.clone(), grid[i].clone());
                values.insert(key.clone(), serde_json::to_value(&grid[i]).expect("toml value serializes"));
            }
            let n = points.len() as u64;
            // TOML integers are signed, so derived seeds keep 63 bits.
            let seed = derive_seed(base_seed, n) >> 1;
            table
                .get_mut("run")
                .and_then(|v| v.as_table_mut())
                .expect("run section parsed")
                .insert("seed".into(), toml::Value::Integer(seed as i64));
            let config = parse_point(&table).map_err(|e| prefix_point(e, &values))?;
            points.push(GridPoint {
                index: n as usize,
                values: Value::Object(values),
                config,
            });

            let mut k = resolved.len();
            loop {
                if k == 0 {
                    return Ok(points);
                }
                k -= 1;
                index[k] += 1;
                if index[k] < resolved[k].2.len() {
                    break;
                }
                index[k] = 0;
            }
        }
    }

    /// Finds the section owning a swept key. `section.field` is explicit;
    /// a bare name is looked up in graph, process and operation in turn.
    fn locate(&self, key: &str) -> Result<(String, String)> {
        let path = format!("sweep.{key}");
        if let Some((section, field)) = key.split_once('.') {
            if !["graph", "process", "operation", "run"].contains(&section) {
                return Err(CliError::validation(path, format!("unknown section `{section}`")));
            }
            return self.check_sweepable(&path, section, field);
        }
        for section in ["graph", "process", "operation"] {
            if self.section_has(section, key) {
                return self.check_sweepable(&path, section, key);
            }
        }
        if key == "radius" {
            return Ok(("graph".into(), "radius".into()));
        }
        Err(CliError::validation(
            path,
            "not a parameter of [graph], [process] or [operation]",
        ))
    }

    fn section_has(&self, section: &str, key: &str) -> bool {
        self.table
            .get(section)
            .and_then(|v| v.as_table())
            .is_some_and(|t| t.contains_key(key))
    }

    fn check_sweepable(&self, path: &str, section: &str, field: &str) -> Result<(String, String)> {
        match (section, field) {
            ("run", "seed") => Err(CliError::validation(path, "sweep seeds are derived per grid point")),
            (_, "family" | "process" | "name") if section != "run" => {
                Err(CliError::validation(path, "only scalar parameters can be swept"))
            }
            _ if !self.table.contains_key(section) => {
                Err(CliError::validation(path, format!("section [{section}] is missing")))
            }
            _ => Ok((section.to_string(), field.to_string())),
        }
    }
}

fn prefix_point(e: CliError, values: &serde_json::Map<String, Value>) -> CliError {
    match e {
        CliError::Validation { path, message } => {
            CliError::validation(path, format!("{message} (at grid point {})", Value::Object(values.clone())))
        }
        other => other,
    }
}

#[derive(Clone, Debug)]
pub struct GridPoint {
    pub index: usize,
    /// Swept key to value at this point.
    pub values: Value,
    pub config: ExperimentConfig,
}

pub fn parse_point(table: &toml::Table) -> Result<ExperimentConfig> {
    Ok(ExperimentConfig {
        graph: section(table, "graph")?,
        process: section(table, "process")?,
        operation: section(table, "operation")?,
        run: section(table, "run")?,
    })
}

fn section<T: DeserializeOwned + Serialize>(table: &toml::Table, name: &str) -> Result<T> {
    let raw = table
        .get(name)
        .ok_or_else(|| CliError::validation(name, "missing section"))?;
    if !raw.is_table() {
        return Err(CliError::validation(name, "must be a table"));
    }
    let value: T = raw
        .clone()
        .try_into()
        .map_err(|e: toml::de::Error| CliError::validation(name, e.message().to_string()))?;
    // Tagged and flattened types ignore stray keys; the echo shows which
    // keys were consumed.
    let echo = serde_json::to_value(&value).expect("config section serializes");
    reject_unknown(name, raw, &echo)?;
    Ok(value)
}

fn reject_unknown(path: &str, raw: &toml::Value, echo: &Value) -> Result<()> {
    if let (toml::Value::Table(t), Value::Object(o)) = (raw, echo) {
        for (k, v) in t {
            let p = format!("{path}.{k}");
            match o.get(k) {
                None => return Err(CliError::validation(p, "unknown field")),
                Some(e) => reject_unknown(&p, v, e)?,
            }
        }
    }
    Ok(())
}

/// `--out`, then `run.output_dir`, then the environment, then a default.
pub fn output_dir(cli: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    cli.map(Path::to_path_buf)
        .or_else(|| cfg.run.output_dir.clone())
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}
