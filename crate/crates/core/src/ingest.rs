//! Dataset assembly: incident parsing, category mapping, deduplication,
//! firm-year aggregation, feature encoding and the feature join.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{
    derive_labels, CountMatrix, FeatureMatrix, LabelMatrix, LabelSet, Matrix, RowKey, OTHER_LABEL,
};
use crate::error::{Error, Result};

/// Name of the feature column appended by [`join_features`] when requested.
pub const YEAR_FEATURE: &str = "ACCIDENT_YEAR";

/// Calendar date of an incident; month and day may be unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IncidentDate {
    pub year: i32,
    pub month: Option<u8>,
    pub day: Option<u8>,
}

impl IncidentDate {
    pub fn year_only(year: i32) -> Self {
        Self {
            year,
            month: None,
            day: None,
        }
    }

    pub fn ymd(year: i32, month: u8, day: u8) -> Self {
        Self {
            year,
            month: Some(month),
            day: Some(day),
        }
    }

    /// Parses `YYYY`, `YYYY-MM` or `YYYY-MM-DD` (also with `/` separators).
    pub fn parse(s: &str) -> Option<Self> {
        let parts: Vec<&str> = s.trim().split(['-', '/']).collect();
        let year: i32 = parts.first()?.parse().ok()?;
        let month = match parts.get(1) {
            Some(m) => {
                let m: u8 = m.parse().ok()?;
                (1..=12).contains(&m).then_some(m)?;
                Some(m)
            }
            None => None,
        };
        let day = match parts.get(2) {
            Some(d) => {
                let d: u8 = d.parse().ok()?;
                (1..=31).contains(&d).then_some(d)?;
                Some(d)
            }
            None => None,
        };
        if parts.len() > 3 {
            return None;
        }
        Some(Self { year, month, day })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncidentRecord {
    pub company_id: String,
    pub case_type: String,
    pub date: IncidentDate,
}

/// Column names of the incident CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IncidentSchema {
    pub company_col: String,
    pub case_type_col: String,
    pub year_col: String,
    /// Used when present in the header; never required.
    pub date_col: String,
    pub min_year: i32,
    pub max_year: i32,
}

impl Default for IncidentSchema {
    fn default() -> Self {
        Self {
            company_col: "COMPANY_ID".into(),
            case_type_col: "CASE_TYPE_LG".into(),
            year_col: "ACCIDENT_YEAR".into(),
            date_col: "DATE".into(),
            min_year: 1900,
            max_year: 2100,
        }
    }
}

/// A dropped input row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    /// 1-based line number in the source, counting the header as line 1.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedIncidents {
    pub records: Vec<IncidentRecord>,
    pub rejects: Vec<Reject>,
}

fn is_missing(s: &str) -> bool {
    let t = s.trim();
    t.is_empty()
        || ["na", "n/a", "nan", "null", "none"]
            .iter()
            .any(|m| t.eq_ignore_ascii_case(m))
}

fn header_index(headers: &csv::StringRecord) -> Result<HashMap<String, usize>> {
    let mut idx = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        let h = h.trim().to_string();
        if idx.insert(h.clone(), i).is_some() {
            return Err(Error::Schema(format!("duplicate header column {h:?}")));
        }
    }
    Ok(idx)
}

/// Reads incident rows. Rows without a company id or a usable year are
/// dropped and reported; structural problems with the header are errors.
pub fn parse_incidents<R: Read>(source: R, schema: &IncidentSchema) -> Result<ParsedIncidents> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(false)
        .from_reader(source);
    let mut records = reader.records();
    let headers = match records.next() {
        None => return Ok(ParsedIncidents::default()),
        Some(h) => h?,
    };
    let idx = header_index(&headers)?;
    let col = |name: &str| {
        idx.get(name)
            .copied()
            .ok_or_else(|| Error::Schema(format!("missing required column {name:?}")))
    };
    let company = col(&schema.company_col)?;
    let case_type = col(&schema.case_type_col)?;
    let year_col = col(&schema.year_col)?;
    let date_col = idx.get(&schema.date_col).copied();
    let width = headers.len();

    let mut out = ParsedIncidents::default();
    for (n, row) in records.enumerate() {
        let line = n as u64 + 2;
        let mut reject = |reason: &str| {
            out.rejects.push(Reject {
                line,
                reason: reason.to_string(),
            })
        };
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                reject(&format!("unreadable row: {e}"));
                continue;
            }
        };
        if row.len() != width {
            reject(&format!("expected {width} fields, found {}", row.len()));
            continue;
        }
        let id = row[company].trim();
        if is_missing(id) {
            reject("missing company id");
            continue;
        }
        let date = match date_col.map(|c| &row[c]).filter(|s| !is_missing(s)) {
            Some(s) => match IncidentDate::parse(s) {
                Some(d) => Some(d),
                None => {
                    reject("malformed date");
                    continue;
                }
            },
            None => None,
        };
        let year_field = row[year_col].trim();
        let year = if is_missing(year_field) {
            date.map(|d| d.year)
        } else {
            match year_field.parse::<i32>() {
                Ok(y) => Some(y),
                Err(_) => {
                    reject("malformed year");
                    continue;
                }
            }
        };
        let Some(year) = year else {
            reject("missing year");
            continue;
        };
        if year < schema.min_year || year > schema.max_year {
            reject("year out of range");
            continue;
        }
        let date = match date {
            Some(d) if d.year != year => {
                reject("date disagrees with year");
                continue;
            }
            Some(d) => d,
            None => IncidentDate::year_only(year),
        };
        out.records.push(IncidentRecord {
            company_id: id.to_string(),
            case_type: row[case_type].trim().to_string(),
            date,
        });
    }
    Ok(out)
}

/// Writes rejects as JSON lines.
pub fn write_rejects<W: Write>(mut w: W, rejects: &[Reject]) -> Result<()> {
    for r in rejects {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Source category string to label name. Lookup is case-insensitive; inputs
/// that neither have an entry nor already equal a label name map to `Other`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryMap {
    entries: BTreeMap<String, String>,
}

impl CategoryMap {
    pub fn new<I, K, V>(entries: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: Into<String>,
    {
        Self {
            entries: entries
                .into_iter()
                .map(|(k, v)| (normalize(k.as_ref()), v.into()))
                .collect(),
        }
    }

    /// A starter map for common public-breach category codes.
    pub fn common() -> Self {
        Self::new([
            ("hack", "Data Breach"),
            ("hacking", "Data Breach"),
            ("malware", "Data Breach"),
            ("data breach", "Data Breach"),
            ("ransomware", "Extortion/Fraud"),
            ("extortion", "Extortion/Fraud"),
            ("fraud", "Extortion/Fraud"),
            ("card", "Extortion/Fraud"),
            ("social engineering", "Extortion/Fraud"),
            ("phishing", "Extortion/Fraud"),
            ("insd", "Privacy Violation"),
            ("phys", "Privacy Violation"),
            ("port", "Privacy Violation"),
            ("privacy", "Privacy Violation"),
            ("privacy violation", "Privacy Violation"),
            ("disc", "IT Error"),
            ("error", "IT Error"),
            ("misconfiguration", "IT Error"),
            ("it error", "IT Error"),
            ("unkn", "Other"),
        ])
    }

    pub fn insert(&mut self, raw: &str, label: &str) {
        self.entries.insert(normalize(raw), label.to_string());
    }

    /// Label name for a raw category string.
    pub fn map_category<'a>(&'a self, raw: &str, labels: &'a LabelSet) -> &'a str {
        let key = normalize(raw);
        if let Some(v) = self.entries.get(&key) {
            if labels.index_of(v).is_some() {
                return v;
            }
        }
        labels
            .names()
            .iter()
            .find(|n| normalize(n) == key)
            .map_or(OTHER_LABEL, String::as_str)
    }

    /// Column of the label set a raw category falls into.
    pub fn label_index(&self, raw: &str, labels: &LabelSet) -> Result<usize> {
        let name = self.map_category(raw, labels);
        labels
            .index_of(name)
            .ok_or_else(|| Error::invalid(format!("label set has no {name:?} column")))
    }

    /// Checks that every target names a label in `labels` and that the
    /// fallback label exists.
    pub fn validate(&self, labels: &LabelSet) -> Result<()> {
        if labels.index_of(OTHER_LABEL).is_none() {
            return Err(Error::Schema(format!("label set lacks {OTHER_LABEL:?}")));
        }
        for (k, v) in &self.entries {
            if labels.index_of(v).is_none() {
                return Err(Error::Schema(format!(
                    "category {k:?} maps to unknown label {v:?}"
                )));
            }
        }
        Ok(())
    }
}

fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Keeps the first record of every `(company, label, date)` triple.
///
/// Dates are compared at the granularity they were recorded with, so two
/// year-only records of the same type for the same company and year collide.
pub fn dedupe(
    records: &[IncidentRecord],
    map: &CategoryMap,
    labels: &LabelSet,
) -> Vec<IncidentRecord> {
    let mut seen = HashSet::new();
    records
        .iter()
        .filter(|r| {
            let label = map.map_category(&r.case_type, labels);
            seen.insert((r.company_id.as_str(), label, r.date))
        })
        .cloned()
        .collect()
}

/// Counts per firm-year, rows sorted by `(company_id, year)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FirmYearCounts {
    pub keys: Vec<RowKey>,
    pub counts: CountMatrix,
}

pub fn aggregate_firm_year(
    records: &[IncidentRecord],
    map: &CategoryMap,
    labels: &LabelSet,
) -> Result<FirmYearCounts> {
    let q = labels.len();
    let mut tally: BTreeMap<RowKey, Vec<u32>> = BTreeMap::new();
    for r in records {
        let j = map.label_index(&r.case_type, labels)?;
        let key = RowKey {
            company_id: r.company_id.clone(),
            year: r.date.year,
        };
        tally.entry(key).or_insert_with(|| vec![0; q])[j] += 1;
    }
    let mut keys = Vec::with_capacity(tally.len());
    let mut values = Vec::with_capacity(tally.len() * q);
    for (k, v) in tally {
        keys.push(k);
        values.extend(v);
    }
    let counts = CountMatrix::new(labels.clone(), keys.len(), values)?;
    Ok(FirmYearCounts { keys, counts })
}

/// Raw entity feature table: one row per company, string cells, missing
/// markers allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub companies: Vec<String>,
    pub cells: Vec<Vec<Option<String>>>,
}

impl FeatureTable {
    pub fn new(names: Vec<String>, rows: Vec<(String, Vec<Option<String>>)>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut companies = Vec::with_capacity(rows.len());
        let mut cells = Vec::with_capacity(rows.len());
        for (id, row) in rows {
            if row.len() != names.len() {
                return Err(Error::Schema(format!(
                    "feature row for {id:?} has {} cells, expected {}",
                    row.len(),
                    names.len()
                )));
            }
            if !seen.insert(id.clone()) {
                return Err(Error::Schema(format!(
                    "company {id:?} appears twice in feature table"
                )));
            }
            companies.push(id);
            cells.push(row);
        }
        Ok(Self {
            names,
            companies,
            cells,
        })
    }

    fn column(&self, j: usize) -> impl Iterator<Item = Option<&str>> {
        self.cells.iter().map(move |r| r[j].as_deref())
    }
}

/// Reads a feature CSV keyed by `id_col`.
pub fn parse_feature_table<R: Read>(source: R, id_col: &str) -> Result<FeatureTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(source);
    let mut records = reader.records();
    let headers = records
        .next()
        .ok_or_else(|| Error::Schema("feature table has no header".into()))??;
    let idx = header_index(&headers)?;
    let id = *idx
        .get(id_col)
        .ok_or_else(|| Error::Schema(format!("missing required column {id_col:?}")))?;
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != id)
        .map(|(_, h)| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec?;
        let company = rec[id].trim().to_string();
        if is_missing(&company) {
            return Err(Error::Schema("feature row without company id".into()));
        }
        let row = rec
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != id)
            .map(|(_, v)| (!is_missing(v)).then(|| v.trim().to_string()))
            .collect();
        rows.push((company, row));
    }
    FeatureTable::new(names, rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Imputation {
    ZeroFill,
    #[default]
    MedianFill,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EncodingPolicy {
    pub numeric: Imputation,
    /// Per-column override of `numeric`.
    #[serde(default)]
    pub overrides: BTreeMap<String, Imputation>,
}

pub const UNKNOWN_LEVEL: &str = "__unknown__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnEncoding {
    Numeric {
        name: String,
        fill: f64,
    },
    /// One indicator per level plus an `__unknown__` indicator that absorbs
    /// missing cells and levels unseen at fit time.
    Categorical {
        name: String,
        levels: Vec<String>,
    },
    Dropped {
        name: String,
    },
}

/// Fitted imputation and one-hot encoding, persisted for inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub columns: Vec<ColumnEncoding>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl Encoding {
    pub fn fit(table: &FeatureTable, policy: &EncodingPolicy) -> Encoding {
        let columns = table
            .names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let present: Vec<&str> = table.column(j).flatten().collect();
                if present.is_empty() {
                    warn!("feature column {name:?} has no values; dropped");
                    return ColumnEncoding::Dropped { name: name.clone() };
                }
                let numeric: Option<Vec<f64>> = present
                    .iter()
                    .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
                    .collect();
                match numeric {
                    Some(values) => {
                        let rule = policy
                            .overrides
                            .get(name)
                            .copied()
                            .unwrap_or(policy.numeric);
                        let fill = match rule {
                            Imputation::ZeroFill => 0.0,
                            Imputation::MedianFill => median(values),
                        };
                        ColumnEncoding::Numeric {
                            name: name.clone(),
                            fill,
                        }
                    }
                    None => {
                        let mut levels: Vec<String> =
                            present.iter().map(|s| s.to_string()).collect();
                        levels.sort();
                        levels.dedup();
                        ColumnEncoding::Categorical {
                            name: name.clone(),
                            levels,
                        }
                    }
                }
            })
            .collect();
        Encoding { columns }
    }

    pub fn output_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for c in &self.columns {
            match c {
                ColumnEncoding::Numeric { name, .. } => names.push(name.clone()),
                ColumnEncoding::Categorical { name, levels } => {
                    names.extend(levels.iter().map(|l| format!("{name}={l}")));
                    names.push(format!("{name}={UNKNOWN_LEVEL}"));
                }
                ColumnEncoding::Dropped { .. } => {}
            }
        }
        names
    }

    /// Encodes a table whose columns are matched to the fitted encoding by name.
    pub fn transform(&self, table: &FeatureTable) -> Result<FeatureMatrix> {
        let pos: HashMap<&str, usize> = table
            .names
            .iter()
            .enumerate()
            .map(|(j, n)| (n.as_str(), j))
            .collect();
        let names = self.output_names();
        let mut values = Vec::with_capacity(table.companies.len() * names.len());
        for row in &table.cells {
            for c in &self.columns {
                let cell = |name: &str| -> Result<Option<&str>> {
                    let j = pos
                        .get(name)
                        .ok_or_else(|| Error::Schema(format!("feature column {name:?} missing")))?;
                    Ok(row[*j].as_deref())
                };
                match c {
                    ColumnEncoding::Numeric { name, fill } => {
                        let v = match cell(name)? {
                            None => *fill,
                            Some(s) => s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(
                                || {
                                    Error::Schema(format!(
                                        "non-numeric value {s:?} in column {name:?}"
                                    ))
                                },
                            )?,
                        };
                        values.push(v);
                    }
                    ColumnEncoding::Categorical { name, levels } => {
                        let v = cell(name)?;
                        let hit = v.and_then(|s| levels.iter().position(|l| l == s));
                        values.extend((0..levels.len()).map(|k| {
                            if hit == Some(k) {
                                1.0
                            } else {
                                0.0
                            }
                        }));
                        values.push(if hit.is_none() { 1.0 } else { 0.0 });
                    }
                    ColumnEncoding::Dropped { .. } => {}
                }
            }
        }
        let m = Matrix::new(table.companies.len(), names.len(), values)?;
        FeatureMatrix::new(names, m)
    }
}

/// Company-level encoded features.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFeatures {
    pub companies: Vec<String>,
    pub matrix: FeatureMatrix,
    pub encoding: Encoding,
}

pub fn impute_and_encode(table: &FeatureTable, policy: &EncodingPolicy) -> Result<EncodedFeatures> {
    let encoding = Encoding::fit(table, policy);
    let matrix = encoding.transform(table)?;
    Ok(EncodedFeatures {
        companies: table.companies.clone(),
        matrix,
        encoding,
    })
}

/// Modeling dataset: firm-year keys with features and counts, row-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub keys: Vec<RowKey>,
    pub features: FeatureMatrix,
    pub counts: CountMatrix,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.keys.len()
    }

    pub fn labels(&self) -> LabelMatrix {
        derive_labels(&self.counts)
    }

    /// Restricts the features to `columns`, which must be a strict subset of
    /// the current feature set.
    pub fn project(&self, columns: &[String]) -> Result<Dataset> {
        let unique: HashSet<&String> = columns.iter().collect();
        if unique.len() != columns.len() {
            return Err(Error::Schema("projection lists a column twice".into()));
        }
        if columns.len() >= self.features.cols() {
            return Err(Error::Schema(
                "projected feature set must be a strict subset".into(),
            ));
        }
        Ok(Dataset {
            keys: self.keys.clone(),
            features: self.features.project(columns)?,
            counts: self.counts.clone(),
        })
    }

    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            keys: idx.iter().map(|&i| self.keys[i].clone()).collect(),
            features: self.features.select_rows(idx),
            counts: self.counts.select_rows(idx),
        }
    }
}

/// Inner join of firm-year counts with company features. Row order follows
/// the count rows; firm-years whose company has no features are dropped.
pub fn join_features(
    counts: &FirmYearCounts,
    features: &EncodedFeatures,
    year_feature: bool,
) -> Result<Dataset> {
    let pos: HashMap<&str, usize> = features
        .companies
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut names = features.matrix.names().to_vec();
    if year_feature {
        if names.iter().any(|n| n == YEAR_FEATURE) {
            return Err(Error::Schema(format!(
                "feature table already has {YEAR_FEATURE}"
            )));
        }
        names.push(YEAR_FEATURE.to_string());
    }
    let mut keys = Vec::new();
    let mut rows = Vec::new();
    let mut kept = Vec::new();
    for (i, key) in counts.keys.iter().enumerate() {
        let Some(&f) = pos.get(key.company_id.as_str()) else {
            continue;
        };
        let mut row = features.matrix.values().row(f).to_vec();
        if year_feature {
            row.push(f64::from(key.year));
        }
        keys.push(key.clone());
        rows.push(row);
        kept.push(i);
    }
    if keys.is_empty() {
        return Err(Error::EmptyDataset(
            "no firm-year matches a company in the feature table".into(),
        ));
    }
    let m = Matrix::new(
        rows.len(),
        names.len(),
        rows.into_iter().flatten().collect(),
    )?;
    Ok(Dataset {
        keys,
        features: FeatureMatrix::new(names, m)?,
        counts: counts.counts.select_rows(&kept),
    })
}
