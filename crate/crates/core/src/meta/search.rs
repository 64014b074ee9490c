use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{
    augment, binarize, clamp_nonnegative, fit_fixed, fit_position, ChainModel, FixedConfig,
    ModelKind, REFIT,
};
use super::space::SearchSpace;
use crate::data::{make_folds, CountMatrix, LabelMatrix, LabelSet, Matrix};
use crate::error::{Error, Result};
use crate::metrics::{
    classification_report_bits, regression_report, ClassificationOptions, Metric,
};
use crate::rng::derive_seed;
use crate::trees::{BaseFamily, Task, TreeParams};

const FOLD_STREAM: u64 = 0xF01D;
const START_THRESHOLD: f64 = 0.5;

/// One evaluated configuration of the joint search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    /// Position of the order in Σ (0 for models without an order).
    pub order_index: usize,
    pub order: Vec<usize>,
    /// Position of the hyperparameters in Θ.
    pub theta_index: usize,
    pub thresholds: Option<Vec<f64>>,
    pub fold_losses: Vec<f64>,
    pub mean_loss: f64,
    pub disqualified: bool,
}

impl CvRow {
    pub fn new(
        order_index: usize,
        order: Vec<usize>,
        theta_index: usize,
        thresholds: Option<Vec<f64>>,
        fold_losses: Vec<f64>,
    ) -> CvRow {
        let disqualified = fold_losses.iter().any(|l| l.is_nan());
        let mean_loss = fold_losses.iter().sum::<f64>() / fold_losses.len() as f64;
        CvRow {
            order_index,
            order,
            theta_index,
            thresholds,
            fold_losses,
            mean_loss,
            disqualified,
        }
    }

    fn tie_key_cmp(&self, other: &CvRow) -> Ordering {
        self.order_index
            .cmp(&other.order_index)
            .then(self.theta_index.cmp(&other.theta_index))
            .then_with(|| match (&self.thresholds, &other.thresholds) {
                (Some(a), Some(b)) => a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(Ordering::Equal),
                _ => Ordering::Equal,
            })
    }
}

/// Full record of a joint search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvTable {
    pub kind: ModelKind,
    pub family: BaseFamily,
    pub metric: Metric,
    pub folds: usize,
    pub params: Vec<TreeParams>,
    pub rows: Vec<CvRow>,
    pub selected: usize,
}

/// Index of the row with the smallest mean fold loss. Ties go to the earlier
/// order in Σ, then the earlier hyperparameter set, then the
/// lexicographically smaller threshold vector. Rows with a NaN fold loss are
/// skipped.
pub fn cv_select(rows: &[CvRow]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        if r.disqualified {
            warn!(
                "configuration (order {}, theta {}) disqualified: NaN fold loss",
                r.order_index, r.theta_index
            );
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let cur = &rows[b];
                let better = r.mean_loss < cur.mean_loss
                    || (r.mean_loss == cur.mean_loss && r.tie_key_cmp(cur) == Ordering::Less);
                Some(if better { i } else { b })
            }
        };
    }
    best.ok_or_else(|| Error::NoAdmissibleConfig("every configuration has a NaN fold loss".into()))
}

/// A fitted model with the search that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub model: ChainModel,
    pub cv: CvTable,
}

struct Fold {
    x_tr: Matrix,
    y_tr: Matrix,
    x_va: Matrix,
    y_va: Matrix,
    bits_va: Vec<u8>,
}

fn build_folds(x: &Matrix, y: &Matrix, k: usize, seed: u64) -> Result<Vec<Fold>> {
    let rows: Vec<usize> = (0..x.rows()).collect();
    let plan = make_folds(&rows, k, derive_seed(seed, &[FOLD_STREAM]))?;
    Ok((0..k)
        .map(|f| {
            let (tr, va) = plan.split(f);
            let y_va = y.select_rows(&va);
            let bits_va = y_va
                .as_slice()
                .iter()
                .map(|&v| u8::from(v != 0.0))
                .collect();
            Fold {
                x_tr: x.select_rows(&tr),
                y_tr: y.select_rows(&tr),
                x_va: x.select_rows(&va),
                y_va,
                bits_va,
            }
        })
        .collect())
}

struct Scorer {
    metric: Metric,
    opts: ClassificationOptions,
    clamp: bool,
}

impl Scorer {
    fn class_loss(&self, fold: &Fold, scores: &Matrix, tau: &[f64]) -> Result<f64> {
        let q = tau.len();
        let pred: Vec<u8> = scores
            .as_slice()
            .iter()
            .enumerate()
            .map(|(k, &s)| u8::from(s >= tau[k % q]))
            .collect();
        let r = classification_report_bits(q, &fold.bits_va, &pred, self.opts)?;
        Ok(self.metric.as_loss(r.get(self.metric).unwrap_or(f64::NAN)))
    }

    fn reg_loss(&self, fold: &Fold, mut pred: Matrix) -> Result<f64> {
        if self.clamp {
            clamp_nonnegative(&mut pred);
        }
        let r = regression_report(&fold.y_va, &pred)?;
        Ok(self.metric.as_loss(r.get(self.metric).unwrap_or(f64::NAN)))
    }
}

fn mean_or_inf(losses: &[f64]) -> f64 {
    let m = losses.iter().sum::<f64>() / losses.len() as f64;
    if m.is_nan() {
        f64::INFINITY
    } else {
        m
    }
}

/// Coordinate-wise threshold search. First every label is swept alone with
/// the others held at 0.5, then the per-label winners are combined and each
/// label is swept once more against the current vector. Returns every
/// distinct vector evaluated, in evaluation order, with its fold losses.
pub(crate) fn sweep_thresholds(
    grids: &[Vec<f64>],
    mut eval: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let q = grids.len();
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut records: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut run = |tau: &[f64], records: &mut Vec<(Vec<f64>, Vec<f64>)>| -> Result<f64> {
        let key: Vec<u64> = tau.iter().map(|t| t.to_bits()).collect();
        if let Some(&i) = seen.get(&key) {
            return Ok(mean_or_inf(&records[i].1));
        }
        let losses = eval(tau)?;
        let m = mean_or_inf(&losses);
        seen.insert(key, records.len());
        records.push((tau.to_vec(), losses));
        Ok(m)
    };

    let base = vec![START_THRESHOLD; q];
    let mut combined = base.clone();
    for j in 0..q {
        let mut best = (f64::INFINITY, grids[j][0]);
        for &t in &grids[j] {
            let mut tau = base.clone();
            tau[j] = t;
            let l = run(&tau, &mut records)?;
            if l < best.0 {
                best = (l, t);
            }
        }
        combined[j] = best.1;
    }
    let mut cur_loss = run(&combined, &mut records)?;
    for j in 0..q {
        for &t in &grids[j] {
            let mut tau = combined.clone();
            tau[j] = t;
            let l = run(&tau, &mut records)?;
            if l < cur_loss || (l == cur_loss && t < combined[j]) {
                cur_loss = l;
                combined[j] = t;
            }
        }
    }
    Ok(records)
}

type PositionScores = Arc<(Vec<f64>, Vec<f64>)>;

/// Per-fold classifier chain whose positions are cached by the thresholds of
/// the earlier positions, which fully determine their augmented inputs.
struct ChainFold<'a> {
    fold: &'a Fold,
    fold_id: u64,
    cache: HashMap<Vec<u64>, PositionScores>,
}

impl ChainFold<'_> {
    fn val_scores(
        &mut self,
        order: &[usize],
        tau: &[f64],
        family: BaseFamily,
        params: &TreeParams,
        seed: u64,
    ) -> Result<Matrix> {
        let q = order.len();
        let mut extra_tr: Vec<Vec<f64>> = Vec::new();
        let mut extra_va: Vec<Vec<f64>> = Vec::new();
        let mut cols = vec![Vec::new(); q];
        let mut key: Vec<u64> = Vec::new();
        for (j, &label) in order.iter().enumerate() {
            let out = match self.cache.get(&key) {
                Some(o) => o.clone(),
                None => {
                    let xa_tr = augment(&self.fold.x_tr, &extra_tr)?;
                    let xa_va = augment(&self.fold.x_va, &extra_va)?;
                    let l = fit_position(
                        family,
                        Task::Classification,
                        &xa_tr,
                        &self.fold.y_tr,
                        label,
                        params,
                        seed,
                        self.fold_id,
                    )?;
                    let o = Arc::new((l.predict(&xa_tr)?.column(0), l.predict(&xa_va)?.column(0)));
                    self.cache.insert(key.clone(), o.clone());
                    o
                }
            };
            if j + 1 < q {
                extra_tr.push(binarize(&out.0, tau[label]));
                extra_va.push(binarize(&out.1, tau[label]));
                key.push(tau[label].to_bits());
            }
            cols[label] = out.1.clone();
        }
        Matrix::from_columns(&cols)
    }
}

struct Problem<'a> {
    kind: ModelKind,
    family: BaseFamily,
    labels: &'a LabelSet,
    space: &'a SearchSpace,
    seed: u64,
    scorer: Scorer,
    folds: Vec<Fold>,
    grids: Vec<Vec<f64>>,
}

impl Problem<'_> {
    fn fixed<'b>(
        &'b self,
        order: &'b [usize],
        tau: Option<&'b [f64]>,
        theta: usize,
        fold: u64,
    ) -> FixedConfig<'b> {
        FixedConfig {
            kind: self.kind,
            family: self.family,
            labels: self.labels,
            order,
            thresholds: tau,
            params: &self.space.params[theta],
            seed: self.seed,
            fold,
            clamp_nonnegative: self.space.clamp_nonnegative,
        }
    }

    fn evaluate(&self, order_index: usize, order: &[usize], theta: usize) -> Result<Vec<CvRow>> {
        let row = |tau: Option<Vec<f64>>, losses: Vec<f64>| {
            CvRow::new(order_index, order.to_vec(), theta, tau, losses)
        };
        match self.kind {
            ModelKind::Br | ModelKind::Mct => {
                let scores = self
                    .folds
                    .par_iter()
                    .enumerate()
                    .map(|(f, fold)| {
                        fit_fixed(
                            &self.fixed(order, None, theta, f as u64),
                            &fold.x_tr,
                            &fold.y_tr,
                        )?
                        .scores(&fold.x_va)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let records = sweep_thresholds(&self.grids, |tau| {
                    self.folds
                        .iter()
                        .zip(&scores)
                        .map(|(fold, s)| self.scorer.class_loss(fold, s, tau))
                        .collect()
                })?;
                Ok(records.into_iter().map(|(t, l)| row(Some(t), l)).collect())
            }
            ModelKind::Cc => {
                let params = &self.space.params[theta];
                let mut chains: Vec<ChainFold> = self
                    .folds
                    .iter()
                    .enumerate()
                    .map(|(f, fold)| ChainFold {
                        fold,
                        fold_id: f as u64,
                        cache: HashMap::new(),
                    })
                    .collect();
                let records = sweep_thresholds(&self.grids, |tau| {
                    chains
                        .par_iter_mut()
                        .map(|c| {
                            let s = c.val_scores(order, tau, self.family, params, self.seed)?;
                            self.scorer.class_loss(c.fold, &s, tau)
                        })
                        .collect()
                })?;
                Ok(records.into_iter().map(|(t, l)| row(Some(t), l)).collect())
            }
            ModelKind::Mor | ModelKind::Rc | ModelKind::Mrt => {
                let losses = self
                    .folds
                    .par_iter()
                    .enumerate()
                    .map(|(f, fold)| {
                        let m = fit_fixed(
                            &self.fixed(order, None, theta, f as u64),
                            &fold.x_tr,
                            &fold.y_tr,
                        )?;
                        self.scorer.reg_loss(fold, m.scores(&fold.x_va)?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(vec![row(None, losses)])
            }
        }
    }
}

/// Joint K-fold search over (σ, θ, τ) followed by a refit of the selected
/// configuration on all of `x`/`y`.
pub fn fit_meta(
    kind: ModelKind,
    family: BaseFamily,
    x: &Matrix,
    y: &Matrix,
    labels: &LabelSet,
    space: &SearchSpace,
    seed: u64,
) -> Result<FitOutcome> {
    space.validate()?;
    let task = kind.task();
    let q = y.cols();
    if labels.len() != q {
        return Err(Error::invalid("label set does not match target width"));
    }
    if x.rows() != y.rows() {
        return Err(Error::invalid(
            "features and targets have different row counts",
        ));
    }
    if kind.is_joint() && family != BaseFamily::Forest {
        return Err(Error::invalid(
            "joint multi-output models need the forest family",
        ));
    }
    let metric = space.metric_for(task)?;
    let orders = if kind.is_chain() {
        space.order_candidates(q)?
    } else {
        vec![(0..q).collect()]
    };
    let grids = if task == Task::Classification {
        space.thresholds.resolve(q)?
    } else {
        Vec::new()
    };
    let problem = Problem {
        kind,
        family,
        labels,
        space,
        seed,
        scorer: Scorer {
            metric,
            opts: space.metric_options,
            clamp: space.clamp_nonnegative,
        },
        folds: build_folds(x, y, space.folds, seed)?,
        grids,
    };
    let configs: Vec<(usize, usize)> = (0..orders.len())
        .flat_map(|o| (0..space.params.len()).map(move |t| (o, t)))
        .collect();
    let rows: Vec<CvRow> = configs
        .par_iter()
        .map(|&(o, t)| problem.evaluate(o, &orders[o], t))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let selected = cv_select(&rows)?;
    let best = &rows[selected];
    info!(
        "{} selected order {:?}, theta {}, thresholds {:?}, mean loss {}",
        kind.name(),
        best.order,
        best.theta_index,
        best.thresholds,
        best.mean_loss
    );
    let model = fit_fixed(
        &problem.fixed(
            &best.order,
            best.thresholds.as_deref(),
            best.theta_index,
            REFIT,
        ),
        x,
        y,
    )?;
    Ok(FitOutcome {
        model,
        cv: CvTable {
            kind,
            family,
            metric,
            folds: space.folds,
            params: space.params.clone(),
            rows,
            selected,
        },
    })
}

/// Binary relevance: one independent learner per label.
pub fn fit_br(
    x: &Matrix,
    y: &LabelMatrix,
    space: &SearchSpace,
    family: BaseFamily,
    seed: u64,
) -> Result<FitOutcome> {
    fit_meta(
        ModelKind::Br,
        family,
        x,
        &y.to_matrix(),
        y.labels(),
        space,
        seed,
    )
}

/// Classifier chain with joint search over orders, hyperparameters and
/// thresholds.
pub fn fit_cc(
    x: &Matrix,
    y: &LabelMatrix,
    space: &SearchSpace,
    family: BaseFamily,
    seed: u64,
) -> Result<FitOutcome> {
    fit_meta(
        ModelKind::Cc,
        family,
        x,
        &y.to_matrix(),
        y.labels(),
        space,
        seed,
    )
}

/// Single joint multi-label forest.
pub fn fit_mct(x: &Matrix, y: &LabelMatrix, space: &SearchSpace, seed: u64) -> Result<FitOutcome> {
    fit_meta(
        ModelKind::Mct,
        BaseFamily::Forest,
        x,
        &y.to_matrix(),
        y.labels(),
        space,
        seed,
    )
}

pub fn fit_mor(
    x: &Matrix,
    z: &CountMatrix,
    space: &SearchSpace,
    family: BaseFamily,
    seed: u64,
) -> Result<FitOutcome> {
    fit_meta(
        ModelKind::Mor,
        family,
        x,
        &z.to_matrix(),
        z.outputs(),
        space,
        seed,
    )
}

pub fn fit_rc(
    x: &Matrix,
    z: &CountMatrix,
    space: &SearchSpace,
    family: BaseFamily,
    seed: u64,
) -> Result<FitOutcome> {
    fit_meta(
        ModelKind::Rc,
        family,
        x,
        &z.to_matrix(),
        z.outputs(),
        space,
        seed,
    )
}

pub fn fit_mrt(x: &Matrix, z: &CountMatrix, space: &SearchSpace, seed: u64) -> Result<FitOutcome> {
    fit_meta(
        ModelKind::Mrt,
        BaseFamily::Forest,
        x,
        &z.to_matrix(),
        z.outputs(),
        space,
        seed,
    )
}
