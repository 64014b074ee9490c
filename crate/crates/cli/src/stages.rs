use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::Path;
use std::time::Instant;

use cyrisk::data::{derive_labels, make_split, Matrix};
use cyrisk::importance::{
    aggregate_cross_model, model_mdi, model_permutation, model_shap, top_k, CrossModelSummary,
    ImportanceTable, Technique,
};
use cyrisk::ingest::{
    aggregate_firm_year, dedupe, impute_and_encode, join_features, parse_feature_table,
    parse_incidents, write_rejects, ColumnEncoding, YEAR_FEATURE,
};
use cyrisk::meta::{fit_meta, ChainModel, FitOutcome};
use cyrisk::metrics::{classification_report, normalize_for_heatmap, regression_report, Metric};
use cyrisk::rng::{derive_seed, rng_for};
use cyrisk::trees::{from_json, to_json, Task};
use cyrisk::Error;
use log::{info, warn};
use rand::seq::index;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{DatasetId, ExperimentConfig, RosterEntry, SplitName};
use crate::error::{CliError, CliResult};
use crate::store::{
    fmt_f64, load_data, load_split, read_csv, write_atomic, write_csv, write_json, write_matrix,
    DatasetColumns, ModelRecord, RunDir, StoredData, COLUMNS, COUNTS, FEATURES, KEYS, SPLIT,
};

const SPLIT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;
const IMPORTANCE_STREAM: u64 = 3;
const SUBSAMPLE_STREAM: u64 = 4;
const MODEL_KIND: &str = "chain_model";

#[derive(Serialize)]
struct IngestSummary {
    incident_rows: usize,
    rejected_rows: usize,
    after_dedupe: usize,
    firm_years: usize,
    joined_rows: usize,
    companies_with_features: usize,
    d1_features: usize,
    d2_features: usize,
}

pub fn ingest(cfg: &ExperimentConfig, run: &RunDir) -> CliResult<()> {
    let start = Instant::now();
    cfg.check_inputs_exist()?;
    let labels = cfg.label_set()?;
    let map = cfg.category_map();
    map.validate(&labels)?;
    let parsed = parse_incidents(File::open(&cfg.incidents)?, &cfg.incident_schema())?;
    let unique = dedupe(&parsed.records, &map, &labels);
    let firm_years = aggregate_firm_year(&unique, &map, &labels)?;
    let table = parse_feature_table(File::open(&cfg.features)?, &cfg.feature_id_column)?;
    for c in &cfg.d1_columns {
        if !table.names.contains(c) {
            return Err(CliError::Config(format!(
                "D1 column {c:?} is not in the feature table"
            )));
        }
    }
    let encoded = impute_and_encode(&table, &cfg.encoding)?;
    let dataset = join_features(&firm_years, &encoded, cfg.year_feature)?;

    let mut d1: Vec<String> = Vec::new();
    for col in &encoded.encoding.columns {
        match col {
            ColumnEncoding::Numeric { name, .. } if cfg.d1_columns.contains(name) => {
                d1.push(name.clone())
            }
            ColumnEncoding::Categorical { name, .. } if cfg.d1_columns.contains(name) => {
                let prefix = format!("{name}=");
                d1.extend(
                    encoded
                        .matrix
                        .names()
                        .iter()
                        .filter(|n| n.starts_with(&prefix))
                        .cloned(),
                );
            }
            ColumnEncoding::Dropped { name } if cfg.d1_columns.contains(name) => {
                warn!("D1 column {name:?} has no values and was dropped")
            }
            _ => {}
        }
    }
    if cfg.year_feature {
        d1.push(YEAR_FEATURE.to_string());
    }
    // asserts D1 is a strict subset of D2
    dataset.project(&d1)?;

    let keys: Vec<Vec<String>> = dataset
        .keys
        .iter()
        .map(|k| vec![k.company_id.clone(), k.year.to_string()])
        .collect();
    write_csv(
        &run.path(KEYS),
        &["company_id".into(), "year".into()],
        &keys,
    )?;
    write_matrix(
        &run.path(FEATURES),
        dataset.features.names(),
        dataset.features.values(),
    )?;
    write_matrix(
        &run.path(COUNTS),
        dataset.counts.outputs().names(),
        &dataset.counts.to_matrix(),
    )?;
    write_matrix(
        &run.path("data/labels.csv"),
        labels.names(),
        &dataset.labels().to_matrix(),
    )?;
    write_json(
        &run.path(COLUMNS),
        &DatasetColumns {
            d1: d1.clone(),
            d2: dataset.features.names().to_vec(),
        },
    )?;
    write_json(&run.path("data/encoding.json"), &encoded.encoding)?;
    let mut rejects = Vec::new();
    write_rejects(&mut rejects, &parsed.rejects)?;
    write_atomic(&run.path("data/rejects.jsonl"), &rejects)?;
    let summary = IngestSummary {
        incident_rows: parsed.records.len() + parsed.rejects.len(),
        rejected_rows: parsed.rejects.len(),
        after_dedupe: unique.len(),
        firm_years: firm_years.keys.len(),
        joined_rows: dataset.rows(),
        companies_with_features: encoded.companies.len(),
        d1_features: d1.len(),
        d2_features: dataset.features.cols(),
    };
    write_json(&run.path("data/ingest_summary.json"), &summary)?;
    info!(
        "ingested {} firm-years ({} rejects, {} duplicates removed)",
        dataset.rows(),
        parsed.rejects.len(),
        parsed.records.len() - unique.len()
    );
    let artifacts: Vec<String> = [
        KEYS,
        FEATURES,
        COUNTS,
        "data/labels.csv",
        COLUMNS,
        "data/encoding.json",
        "data/rejects.jsonl",
        "data/ingest_summary.json",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    run.record_stage("ingest", start.elapsed().as_secs_f64(), &artifacts, None)
}

pub fn split(cfg: &ExperimentConfig, run: &RunDir) -> CliResult<()> {
    let start = Instant::now();
    let data = load_data(run)?;
    let s = make_split(
        data.keys.len(),
        cfg.split_ratio,
        derive_seed(cfg.seed, &[SPLIT_STREAM]),
    )?;
    info!(
        "split {} rows into {} train / {} test",
        data.keys.len(),
        s.train_rows.len(),
        s.test_rows.len()
    );
    write_json(&run.path(SPLIT), &s)?;
    run.record_stage(
        "split",
        start.elapsed().as_secs_f64(),
        &[SPLIT.to_string()],
        None,
    )
}

fn dataset_matrix(
    data: &StoredData,
    ds: DatasetId,
    rows: &[usize],
) -> CliResult<(Vec<String>, Matrix)> {
    let x = data.features.select_rows(rows);
    match ds {
        DatasetId::D2 => Ok((data.feature_names.clone(), x)),
        DatasetId::D1 => {
            let idx = data
                .d1_columns
                .iter()
                .map(|c| {
                    data.feature_names
                        .iter()
                        .position(|n| n == c)
                        .ok_or_else(|| {
                            CliError::Runtime(format!("D1 column {c:?} missing from features"))
                        })
                })
                .collect::<CliResult<Vec<_>>>()?;
            Ok((data.d1_columns.clone(), x.select_cols(&idx)))
        }
    }
}

/// Targets for `rows`: 0/1 occurrence labels or counts as reals.
fn targets(data: &StoredData, task: Task, rows: &[usize]) -> Matrix {
    let counts = data.counts.select_rows(rows);
    match task {
        Task::Classification => derive_labels(&counts).to_matrix(),
        Task::Regression => counts.to_matrix(),
    }
}

fn model_path(ds: DatasetId, id: &str) -> String {
    format!("models/{}/{id}.json", ds.name())
}

fn cv_path(ds: DatasetId, id: &str) -> String {
    format!("cv/{}/{id}.json", ds.name())
}

fn jobs(cfg: &ExperimentConfig) -> Vec<(RosterEntry, DatasetId)> {
    let mut out = Vec::new();
    for ds in DatasetId::ALL {
        for r in &cfg.roster {
            if r.datasets.contains(&ds) {
                out.push((r.clone(), ds));
            }
        }
    }
    out
}

pub fn train(cfg: &ExperimentConfig, run: &RunDir) -> CliResult<()> {
    let start = Instant::now();
    let data = load_data(run)?;
    let split = load_split(run)?;
    let seed = derive_seed(cfg.seed, &[TRAIN_STREAM]);
    let labels = data.counts.outputs().clone();
    let records = jobs(cfg)
        .into_par_iter()
        .map(|(entry, ds)| -> CliResult<ModelRecord> {
            let t0 = Instant::now();
            let task = entry.kind.task();
            let (_, x) = dataset_matrix(&data, ds, &split.train_rows)?;
            let y = targets(&data, task, &split.train_rows);
            let mut rec = ModelRecord {
                id: entry.id.clone(),
                dataset: ds.name().into(),
                kind: entry.kind.name().into(),
                family: format!("{:?}", entry.family).to_lowercase(),
                status: "trained".into(),
                artifact: None,
                cv_table: None,
                seconds: 0.0,
                message: None,
            };
            match fit_meta(
                entry.kind,
                entry.family,
                &x,
                &y,
                &labels,
                &cfg.space_for(task),
                seed,
            ) {
                Ok(FitOutcome { model, cv }) => {
                    let mp = model_path(ds, &entry.id);
                    let cp = cv_path(ds, &entry.id);
                    write_atomic(&run.path(&mp), to_json(MODEL_KIND, &model)?.as_bytes())?;
                    write_json(&run.path(&cp), &cv)?;
                    rec.artifact = Some(mp);
                    rec.cv_table = Some(cp);
                }
                Err(Error::NoAdmissibleConfig(m)) => {
                    warn!("{}/{}: {m}", ds.name(), entry.id);
                    rec.status = "failed".into();
                    rec.message = Some(m);
                }
                Err(e) => return Err(e.into()),
            }
            rec.seconds = t0.elapsed().as_secs_f64();
            info!("trained {}/{} in {:.2}s", ds.name(), entry.id, rec.seconds);
            Ok(rec)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let artifacts: Vec<String> = records
        .iter()
        .flat_map(|r| r.artifact.iter().chain(r.cv_table.iter()).cloned())
        .collect();
    run.record_stage(
        "train",
        start.elapsed().as_secs_f64(),
        &artifacts,
        Some(records),
    )
}

fn load_model(run: &RunDir, ds: DatasetId, id: &str) -> CliResult<Option<ChainModel>> {
    let p = run.path(&model_path(ds, id));
    if !p.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&p)?;
    Ok(Some(from_json(MODEL_KIND, &text)?))
}

fn metric_values(model: &ChainModel, x: &Matrix, y: &Matrix) -> CliResult<Vec<f64>> {
    Ok(match model.kind.task() {
        Task::Classification => {
            let pred = model.predict_labels(x)?;
            let truth = cyrisk::data::LabelMatrix::new(
                model.labels.clone(),
                y.rows(),
                y.as_slice().iter().map(|&v| u8::from(v != 0.0)).collect(),
            )?;
            let r = classification_report(&truth, &pred)?;
            Metric::CLASSIFICATION
                .iter()
                .map(|&m| r.get(m).unwrap())
                .collect()
        }
        Task::Regression => {
            let r = regression_report(y, &model.predict_regression(x)?)?;
            Metric::REGRESSION
                .iter()
                .map(|&m| r.get(m).unwrap())
                .collect()
        }
    })
}

fn task_name(task: Task) -> &'static str {
    match task {
        Task::Classification => "classification",
        Task::Regression => "regression",
    }
}

fn task_metrics(task: Task) -> &'static [Metric] {
    match task {
        Task::Classification => &Metric::CLASSIFICATION,
        Task::Regression => &Metric::REGRESSION,
    }
}

type Scored = (RosterEntry, DatasetId, Option<Vec<Vec<f64>>>);

pub fn evaluate(cfg: &ExperimentConfig, run: &RunDir) -> CliResult<()> {
    let start = Instant::now();
    let data = load_data(run)?;
    let split = load_split(run)?;
    let results = jobs(cfg)
        .into_par_iter()
        .map(|(entry, ds)| -> CliResult<Scored> {
            let Some(model) = load_model(run, ds, &entry.id)? else {
                warn!(
                    "{}/{}: no model artifact; listed as absent",
                    ds.name(),
                    entry.id
                );
                return Ok((entry, ds, None));
            };
            let task = entry.kind.task();
            let mut per_split = Vec::new();
            for rows in [&split.train_rows, &split.test_rows] {
                let (_, x) = dataset_matrix(&data, ds, rows)?;
                per_split.push(metric_values(&model, &x, &targets(&data, task, rows))?);
            }
            Ok((entry, ds, Some(per_split)))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut artifacts = Vec::new();
    let mut absent = Vec::new();
    for task in [Task::Classification, Task::Regression] {
        let metrics = task_metrics(task);
        let mut header: Vec<String> = vec!["model".into(), "dataset".into(), "split".into()];
        header.extend(metrics.iter().map(|m| m.name().to_string()));
        let mut rows = Vec::new();
        for (s, split_name) in [SplitName::Train, SplitName::Test].iter().enumerate() {
            let mut table_ids = Vec::new();
            let mut table = Vec::new();
            for (entry, ds, values) in &results {
                if entry.kind.task() != task {
                    continue;
                }
                let Some(values) = values else { continue };
                let v = &values[s];
                let mut row = vec![
                    entry.id.clone(),
                    ds.name().to_string(),
                    split_name.name().to_string(),
                ];
                row.extend(v.iter().map(|&x| fmt_f64(x)));
                rows.push(row);
                table_ids.push((entry.id.clone(), *ds));
                table.push(v.clone());
            }
            if table.is_empty() {
                continue;
            }
            let orientation: Vec<bool> = metrics.iter().map(|m| m.is_loss()).collect();
            let norm = match normalize_for_heatmap(&table, &orientation) {
                Ok(n) => n,
                Err(e) => {
                    warn!(
                        "{} {} heatmap skipped: {e}",
                        task_name(task),
                        split_name.name()
                    );
                    continue;
                }
            };
            let mut hrows = Vec::new();
            for (k, (id, ds)) in table_ids.iter().enumerate() {
                for (c, m) in metrics.iter().enumerate() {
                    hrows.push(vec![
                        id.clone(),
                        ds.name().to_string(),
                        m.name().to_string(),
                        fmt_f64(table[k][c]),
                        fmt_f64(norm[k][c]),
                        if m.is_loss() {
                            "lower_better"
                        } else {
                            "higher_better"
                        }
                        .to_string(),
                    ]);
                }
            }
            let rel = format!(
                "reports/heatmap_{}_{}.csv",
                task_name(task),
                split_name.name()
            );
            write_csv(
                &run.path(&rel),
                &[
                    "model",
                    "dataset",
                    "metric",
                    "value",
                    "normalized",
                    "orientation",
                ]
                .map(String::from),
                &hrows,
            )?;
            artifacts.push(rel);
        }
        let rel = format!("reports/{}.csv", task_name(task));
        write_csv(&run.path(&rel), &header, &rows)?;
        artifacts.push(rel);
    }
    for (entry, ds, values) in &results {
        if values.is_none() {
            absent.push(format!("{}/{}", ds.name(), entry.id));
        }
    }
    write_json(&run.path("reports/absent_models.json"), &absent)?;
    artifacts.push("reports/absent_models.json".into());
    run.record_stage("evaluate", start.elapsed().as_secs_f64(), &artifacts, None)
}

fn importance_rows(
    cfg: &ExperimentConfig,
    n: usize,
    split_rows: &[usize],
    ds: DatasetId,
) -> Vec<usize> {
    match cfg.importance.max_rows {
        Some(cap) if cap < n => {
            let mut rng = rng_for(cfg.seed, &[SUBSAMPLE_STREAM, ds as u64]);
            let mut pick: Vec<usize> = index::sample(&mut rng, n, cap)
                .into_iter()
                .map(|i| split_rows[i])
                .collect();
            pick.sort_unstable();
            pick
        }
        _ => split_rows.to_vec(),
    }
}

pub fn importance(cfg: &ExperimentConfig, run: &RunDir) -> CliResult<()> {
    let start = Instant::now();
    let data = load_data(run)?;
    let split = load_split(run)?;
    let seed = derive_seed(cfg.seed, &[IMPORTANCE_STREAM]);
    let mut artifacts = Vec::new();
    for &ds in &cfg.importance.datasets {
        let base_rows = match cfg.importance.split {
            SplitName::Train => &split.train_rows,
            SplitName::Test => &split.test_rows,
        };
        let rows = importance_rows(cfg, base_rows.len(), base_rows, ds);
        let entries: Vec<&RosterEntry> = cfg
            .roster
            .iter()
            .filter(|r| r.datasets.contains(&ds))
            .collect();
        let tables = entries
            .par_iter()
            .map(|entry| -> CliResult<Vec<ImportanceTable>> {
                let Some(model) = load_model(run, ds, &entry.id)? else {
                    warn!(
                        "{}/{}: no model artifact; importance skipped",
                        ds.name(),
                        entry.id
                    );
                    return Ok(Vec::new());
                };
                let task = entry.kind.task();
                let (names, x) = dataset_matrix(&data, ds, &rows)?;
                let y = targets(&data, task, &rows);
                let space = cfg.space_for(task);
                let metric = space.metric_for(task)?;
                let mut out = Vec::new();
                for &t in &cfg.importance.techniques {
                    let (scores, normalized) = match t {
                        Technique::Impurity => (model_mdi(&model), true),
                        Technique::Permutation => (
                            model_permutation(
                                &model,
                                &x,
                                &y,
                                metric,
                                space.metric_options,
                                cfg.importance.repeats,
                                seed,
                            )?,
                            false,
                        ),
                        Technique::Shap => (model_shap(&model, &x)?, false),
                    };
                    out.push(ImportanceTable::new(
                        &entry.id,
                        t,
                        names.clone(),
                        scores,
                        normalized,
                    )?);
                }
                Ok(out)
            })
            .collect::<CliResult<Vec<_>>>()?;

        let dir = format!("importance/{}", ds.name());
        let mut long = Vec::new();
        for (entry, ts) in entries.iter().zip(&tables) {
            for t in ts {
                for (f, s) in t.features.iter().zip(&t.scores) {
                    long.push(vec![
                        f.clone(),
                        entry.id.clone(),
                        t.technique.name().to_string(),
                        fmt_f64(*s),
                        entry.kind.name().to_string(),
                    ]);
                }
            }
        }
        let rel = format!("{dir}/scores.csv");
        write_csv(
            &run.path(&rel),
            &["feature", "model", "technique", "score", "kind"].map(String::from),
            &long,
        )?;
        artifacts.push(rel);
        let mut summaries = Vec::new();

        for task in [Task::Classification, Task::Regression] {
            for &tech in &cfg.importance.techniques {
                let group: Vec<ImportanceTable> = entries
                    .iter()
                    .zip(&tables)
                    .filter(|(e, _)| e.kind.task() == task)
                    .flat_map(|(_, ts)| ts.iter().filter(|t| t.technique == tech).cloned())
                    .collect();
                if group.is_empty() {
                    continue;
                }
                let d = group[0].features.len();
                let k = cfg.importance.top_k.min(d);
                if k < cfg.importance.top_k {
                    warn!(
                        "top_k {} exceeds the {d} features of {}; using {k}",
                        cfg.importance.top_k,
                        ds.name()
                    );
                }
                let summary = aggregate_cross_model(&group, k)?;
                let stem = format!("{dir}/{}_{}", task_name(task), tech.name());

                let mut header = vec!["feature".to_string(), "count".to_string()];
                header.extend(summary.models.iter().cloned());
                let rows: Vec<Vec<String>> = summary
                    .features
                    .iter()
                    .enumerate()
                    .map(|(i, f)| {
                        let mut r = vec![f.clone(), summary.counts[i].to_string()];
                        r.extend(
                            summary.membership[i]
                                .iter()
                                .map(|&b| u8::from(b).to_string()),
                        );
                        r
                    })
                    .collect();
                write_csv(&run.path(&format!("{stem}_counts.csv")), &header, &rows)?;

                let mut header = vec!["feature".to_string()];
                header.extend(summary.models.iter().cloned());
                let rows: Vec<Vec<String>> = summary
                    .features
                    .iter()
                    .enumerate()
                    .map(|(i, f)| {
                        let mut r = vec![f.clone()];
                        r.extend(summary.log_scores[i].iter().map(|&v| fmt_f64(v)));
                        r
                    })
                    .collect();
                write_csv(&run.path(&format!("{stem}_log_scores.csv")), &header, &rows)?;

                let mut rows = Vec::new();
                for t in &group {
                    for (rank, f) in top_k(&t.scores, k)?.into_iter().enumerate() {
                        rows.push(vec![
                            t.model.clone(),
                            (rank + 1).to_string(),
                            t.features[f].clone(),
                            fmt_f64(t.scores[f]),
                        ]);
                    }
                }
                write_csv(
                    &run.path(&format!("{stem}_topk.csv")),
                    &["model", "rank", "feature", "score"].map(String::from),
                    &rows,
                )?;
                write_importance_heatmap(run, &format!("{stem}_heatmap.csv"), &summary)?;
                for suffix in ["counts", "log_scores", "topk", "heatmap"] {
                    artifacts.push(format!("{stem}_{suffix}.csv"));
                }
                summaries.push(ImportanceSummary {
                    task: task_name(task),
                    technique: tech,
                    k,
                    summary,
                });
            }
        }
        let rel = format!("{dir}/importance.json");
        write_json(
            &run.path(&rel),
            &ImportanceDump {
                dataset: ds.name(),
                split: cfg.importance.split.name(),
                rows: rows.len(),
                tables: tables.into_iter().flatten().collect(),
                summaries,
            },
        )?;
        artifacts.push(rel);
    }
    run.record_stage(
        "importance",
        start.elapsed().as_secs_f64(),
        &artifacts,
        None,
    )
}

#[derive(Serialize)]
struct ImportanceSummary {
    task: &'static str,
    technique: Technique,
    k: usize,
    summary: CrossModelSummary,
}

#[derive(Serialize)]
struct ImportanceDump {
    dataset: &'static str,
    split: &'static str,
    rows: usize,
    tables: Vec<ImportanceTable>,
    summaries: Vec<ImportanceSummary>,
}

/// Long-format log-score heatmap with both normalisations: min-max within
/// each model's column and within each feature's row.
fn write_importance_heatmap(run: &RunDir, rel: &str, s: &CrossModelSummary) -> CliResult<()> {
    let n_models = s.models.len();
    let by_model = normalize_for_heatmap(&s.log_scores, &vec![false; n_models])?;
    let transposed: Vec<Vec<f64>> = (0..n_models)
        .map(|m| s.log_scores.iter().map(|r| r[m]).collect())
        .collect();
    let by_feature = normalize_for_heatmap(&transposed, &vec![false; s.features.len()])?;
    let mut rows = Vec::new();
    for (f, feature) in s.features.iter().enumerate() {
        for (m, model) in s.models.iter().enumerate() {
            rows.push(vec![
                feature.clone(),
                model.clone(),
                fmt_f64(s.log_scores[f][m]),
                fmt_f64(by_model[f][m]),
                fmt_f64(by_feature[m][f]),
            ]);
        }
    }
    write_csv(
        &run.path(rel),
        &[
            "feature",
            "model",
            "log_score",
            "normalized_within_model",
            "normalized_within_feature",
        ]
        .map(String::from),
        &rows,
    )
}

fn grid_from_csv(
    path: &Path,
    row_of: impl Fn(&[String]) -> String,
    col: usize,
    value: usize,
    norm: usize,
) -> CliResult<Grid> {
    let (_, records) = read_csv(path)?;
    let mut rows: Vec<String> = Vec::new();
    let mut cols: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(String, String), (f64, f64)> = BTreeMap::new();
    for r in records {
        let row = row_of(&r);
        if !rows.contains(&row) {
            rows.push(row.clone());
        }
        if !cols.contains(&r[col]) {
            cols.push(r[col].clone());
        }
        let v = r[value].parse().unwrap_or(f64::NAN);
        let n = r[norm].parse().unwrap_or(f64::NAN);
        cells.insert((row, r[col].clone()), (v, n));
    }
    let grid = rows
        .iter()
        .map(|m| {
            cols.iter()
                .map(|c| {
                    cells
                        .get(&(m.clone(), c.clone()))
                        .copied()
                        .unwrap_or((f64::NAN, f64::NAN))
                })
                .collect()
        })
        .collect();
    Ok(Grid {
        rows,
        cols,
        cells: grid,
    })
}

struct Grid {
    rows: Vec<String>,
    cols: Vec<String>,
    cells: Vec<Vec<(f64, f64)>>,
}

pub fn report(_cfg: &ExperimentConfig, run: &RunDir) -> CliResult<()> {
    let start = Instant::now();
    let mut artifacts = Vec::new();
    for task in ["classification", "regression"] {
        for split in ["train", "test"] {
            let p = run.path(&format!("reports/heatmap_{task}_{split}.csv"));
            if !p.exists() {
                continue;
            }
            let g = grid_from_csv(&p, |r| format!("{} ({})", r[0], r[1]), 2, 3, 4)?;
            let title = format!("{task} metrics, {split} split");
            let svg = crate::svg::heatmap(
                &title,
                &g.rows,
                &g.cols,
                &g.cells,
                "blue = better, red = worse (per metric column)",
            );
            let out = format!("reports/heatmap_{task}_{split}.svg");
            write_atomic(&run.path(&out), svg.as_bytes())?;
            artifacts.push(out);
        }
    }
    if artifacts.is_empty() {
        return Err(CliError::Runtime(
            "no heatmap data found; run `evaluate` first".into(),
        ));
    }
    let imp = run.path("importance");
    if imp.is_dir() {
        let mut datasets: Vec<String> = fs::read_dir(&imp)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        datasets.sort();
        for ds in datasets {
            for task in ["classification", "regression"] {
                for technique in ["impurity", "permutation", "shap"] {
                    let stem = format!("importance/{ds}/{task}_{technique}_heatmap");
                    let p = run.path(&format!("{stem}.csv"));
                    if !p.exists() {
                        continue;
                    }
                    let g = grid_from_csv(&p, |r| r[0].clone(), 1, 2, 3)?;
                    let title = format!("{ds} {task} {technique} importance (log scale)");
                    let svg = crate::svg::heatmap(
                        &title,
                        &g.rows,
                        &g.cols,
                        &g.cells,
                        "blue = more important (per model column)",
                    );
                    let out = format!("{stem}.svg");
                    write_atomic(&run.path(&out), svg.as_bytes())?;
                    artifacts.push(out);
                }
            }
        }
    }
    run.record_stage("report", start.elapsed().as_secs_f64(), &artifacts, None)
}
