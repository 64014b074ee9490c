use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use cyrisk::data::LabelSet;
use cyrisk::importance::Technique;
use cyrisk::ingest::{CategoryMap, EncodingPolicy, IncidentSchema};
use cyrisk::meta::{ModelKind, SearchSpace};
use cyrisk::metrics::Metric;
use cyrisk::trees::{BaseFamily, Task};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetId {
    D1,
    D2,
}

impl DatasetId {
    pub const ALL: [DatasetId; 2] = [DatasetId::D1, DatasetId::D2];

    pub fn name(self) -> &'static str {
        match self {
            DatasetId::D1 => "d1",
            DatasetId::D2 => "d2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub id: String,
    pub kind: ModelKind,
    pub family: BaseFamily,
    pub datasets: Vec<DatasetId>,
}

fn entry(id: &str, kind: ModelKind, family: BaseFamily, datasets: &[DatasetId]) -> RosterEntry {
    RosterEntry {
        id: id.into(),
        kind,
        family,
        datasets: datasets.to_vec(),
    }
}

/// Five configurations per task on D2; the independent and joint ones
/// (three per task) also on D1.
pub fn default_roster() -> Vec<RosterEntry> {
    use BaseFamily::{Boosted, Forest};
    use DatasetId::{D1, D2};
    vec![
        entry("RF_BR", ModelKind::Br, Forest, &[D1, D2]),
        entry("GBT_BR", ModelKind::Br, Boosted, &[D1, D2]),
        entry("RF_CC", ModelKind::Cc, Forest, &[D2]),
        entry("GBT_CC", ModelKind::Cc, Boosted, &[D2]),
        entry("MCT", ModelKind::Mct, Forest, &[D1, D2]),
        entry("RF_MOR", ModelKind::Mor, Forest, &[D1, D2]),
        entry("GBT_MOR", ModelKind::Mor, Boosted, &[D1, D2]),
        entry("RF_RC", ModelKind::Rc, Forest, &[D2]),
        entry("GBT_RC", ModelKind::Rc, Boosted, &[D2]),
        entry("MRT", ModelKind::Mrt, Forest, &[D1, D2]),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Test,
}

impl SplitName {
    pub fn name(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImportanceConfig {
    pub top_k: usize,
    pub repeats: usize,
    pub datasets: Vec<DatasetId>,
    pub techniques: Vec<Technique>,
    /// Rows used for permutation and SHAP.
    pub split: SplitName,
    /// Seeded subsample cap on those rows.
    pub max_rows: Option<usize>,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        ImportanceConfig {
            top_k: 20,
            repeats: 5,
            datasets: vec![DatasetId::D2],
            techniques: Technique::ALL.to_vec(),
            split: SplitName::Test,
            max_rows: None,
        }
    }
}

fn default_id_column() -> String {
    "COMPANY_ID".into()
}

fn default_ratio() -> f64 {
    0.8
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub incidents: PathBuf,
    pub features: PathBuf,
    #[serde(default)]
    pub incident_schema: Option<IncidentSchema>,
    #[serde(default = "default_id_column")]
    pub feature_id_column: String,
    #[serde(default)]
    pub labels: Option<Vec<String>>,
    /// Extra or overriding source-category mappings.
    #[serde(default)]
    pub category_map: BTreeMap<String, String>,
    #[serde(default)]
    pub encoding: EncodingPolicy,
    /// Raw feature-table columns that make up D1.
    pub d1_columns: Vec<String>,
    #[serde(default = "default_true")]
    pub year_feature: bool,
    #[serde(default = "default_ratio")]
    pub split_ratio: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_roster")]
    pub roster: Vec<RosterEntry>,
    #[serde(default)]
    pub search: SearchSpace,
    #[serde(default)]
    pub classification_metric: Option<Metric>,
    #[serde(default)]
    pub regression_metric: Option<Metric>,
    #[serde(default)]
    pub importance: ImportanceConfig,
}

impl ExperimentConfig {
    /// Reads a config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.incidents, &mut cfg.features] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad("split_ratio must lie strictly between 0 and 1".into());
        }
        if self.d1_columns.is_empty() {
            return bad("d1_columns is empty".into());
        }
        let mut ids = HashSet::new();
        for r in &self.roster {
            if !ids.insert(&r.id) {
                return bad(format!("roster id {:?} is not unique", r.id));
            }
            if r.datasets.is_empty() {
                return bad(format!("roster entry {:?} lists no dataset", r.id));
            }
            if matches!(r.kind, ModelKind::Mct | ModelKind::Mrt) && r.family != BaseFamily::Forest {
                return bad(format!(
                    "roster entry {:?}: joint models use the forest family",
                    r.id
                ));
            }
        }
        if self.importance.repeats == 0 || self.importance.top_k == 0 {
            return bad("importance repeats and top_k must be positive".into());
        }
        self.label_set()?;
        for task in [Task::Classification, Task::Regression] {
            self.space_for(task)
                .metric_for(task)
                .map_err(CliError::from)?;
        }
        self.search.validate().map_err(CliError::from)?;
        Ok(())
    }

    pub fn check_inputs_exist(&self) -> Result<(), CliError> {
        for p in [&self.incidents, &self.features] {
            if !p.is_file() {
                return Err(CliError::Config(format!(
                    "input file {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    pub fn label_set(&self) -> Result<LabelSet, CliError> {
        match &self.labels {
            None => Ok(LabelSet::default()),
            Some(names) => LabelSet::new(names.clone()).map_err(CliError::from),
        }
    }

    pub fn category_map(&self) -> CategoryMap {
        let mut map = CategoryMap::common();
        for (k, v) in &self.category_map {
            map.insert(k, v);
        }
        map
    }

    pub fn incident_schema(&self) -> IncidentSchema {
        self.incident_schema.clone().unwrap_or_default()
    }

    pub fn space_for(&self, task: Task) -> SearchSpace {
        let mut s = self.search.clone();
        s.metric = match task {
            Task::Classification => self.classification_metric,
            Task::Regression => self.regression_metric,
        };
        s
    }

    /// Short hex digest of the canonical config serialisation; names the run
    /// directory.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
