use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cyrisk::data::{CountMatrix, LabelSet, Matrix, RowKey, SplitIndex};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Writes `bytes` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("artifact");
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Shortest round-trip decimal form.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_csv(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

pub fn write_matrix(path: &Path, names: &[String], m: &Matrix) -> CliResult<()> {
    let rows: Vec<Vec<String>> = (0..m.rows())
        .map(|i| m.row(i).iter().map(|&v| fmt_f64(v)).collect())
        .collect();
    write_csv(path, names, &rows)
}

pub fn read_matrix(path: &Path) -> CliResult<(Vec<String>, Matrix)> {
    let (names, rows) = read_csv(path)?;
    let parsed: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            r.iter()
                .map(|c| {
                    c.parse::<f64>().map_err(|_| {
                        CliError::Runtime(format!("{}: bad number {c:?}", path.display()))
                    })
                })
                .collect()
        })
        .collect::<CliResult<_>>()?;
    let m = if parsed.is_empty() {
        Matrix::zeros(0, names.len())
    } else {
        Matrix::from_rows(&parsed)?
    };
    Ok((names, m))
}

/// Entry in the run manifest for one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub id: String,
    pub dataset: String,
    pub kind: String,
    pub family: String,
    pub status: String,
    pub artifact: Option<String>,
    pub cv_table: Option<String>,
    pub seconds: f64,
    pub message: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub software_version: String,
    pub stages: BTreeMap<String, f64>,
    pub models: Vec<ModelRecord>,
    pub artifacts: Vec<String>,
}

/// Layout of one run directory, `<out>/<config hash>/`.
pub struct RunDir {
    pub root: PathBuf,
    pub hash: String,
}

impl RunDir {
    pub fn new(out: &Path, hash: &str) -> RunDir {
        RunDir {
            root: out.join(hash),
            hash: hash.to_string(),
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn require(&self, rel: &str, stage: &str) -> CliResult<PathBuf> {
        let p = self.path(rel);
        if !p.exists() {
            return Err(CliError::Runtime(format!(
                "{} is missing; run `{stage}` first",
                p.display()
            )));
        }
        Ok(p)
    }

    pub fn manifest(&self) -> CliResult<RunManifest> {
        let p = self.path("manifest.json");
        if p.exists() {
            read_json(&p)
        } else {
            Ok(RunManifest {
                config_hash: self.hash.clone(),
                software_version: env!("CARGO_PKG_VERSION").to_string(),
                ..Default::default()
            })
        }
    }

    /// Records a finished stage with its artifacts (relative paths).
    pub fn record_stage(
        &self,
        stage: &str,
        seconds: f64,
        artifacts: &[String],
        models: Option<Vec<ModelRecord>>,
    ) -> CliResult<()> {
        let mut m = self.manifest()?;
        m.stages.insert(stage.to_string(), seconds);
        for a in artifacts {
            if !m.artifacts.contains(a) {
                m.artifacts.push(a.clone());
            }
        }
        m.artifacts.sort();
        if let Some(models) = models {
            m.models = models;
        }
        write_json(&self.path("manifest.json"), &m)
    }
}

/// Ingested dataset as stored on disk.
pub struct StoredData {
    pub keys: Vec<RowKey>,
    pub feature_names: Vec<String>,
    pub features: Matrix,
    pub counts: CountMatrix,
    pub d1_columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetColumns {
    pub d1: Vec<String>,
    pub d2: Vec<String>,
}

pub const KEYS: &str = "data/keys.csv";
pub const FEATURES: &str = "data/features.csv";
pub const COUNTS: &str = "data/counts.csv";
pub const COLUMNS: &str = "data/datasets.json";
pub const SPLIT: &str = "data/split.json";

pub fn load_data(run: &RunDir) -> CliResult<StoredData> {
    let (_, key_rows) = read_csv(&run.require(KEYS, "ingest")?)?;
    let keys = key_rows
        .iter()
        .map(|r| {
            Ok(RowKey {
                company_id: r[0].clone(),
                year: r[1]
                    .parse()
                    .map_err(|_| CliError::Runtime(format!("bad year {:?} in {KEYS}", r[1])))?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let (feature_names, features) = read_matrix(&run.require(FEATURES, "ingest")?)?;
    let (outputs, counts) = read_matrix(&run.require(COUNTS, "ingest")?)?;
    let values = counts.as_slice().iter().map(|&v| v as u32).collect();
    let counts = CountMatrix::new(LabelSet::new(outputs)?, counts.rows(), values)?;
    let cols: DatasetColumns = read_json(&run.require(COLUMNS, "ingest")?)?;
    Ok(StoredData {
        keys,
        feature_names,
        features,
        counts,
        d1_columns: cols.d1,
    })
}

pub fn load_split(run: &RunDir) -> CliResult<SplitIndex> {
    read_json(&run.require(SPLIT, "split")?)
}
