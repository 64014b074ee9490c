use serde::{Deserialize, Serialize};

use crate::data::{LabelMatrix, LabelSet, Matrix};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::trees::{BaseFamily, Learner, Task, TreeParams};

const LEARNER_STREAM: u64 = 0x1EA;
/// Fold id used for the final refit on the whole training split.
pub(crate) const REFIT: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Br,
    Cc,
    Mct,
    Mor,
    Rc,
    Mrt,
}

impl ModelKind {
    pub fn task(self) -> Task {
        match self {
            ModelKind::Br | ModelKind::Cc | ModelKind::Mct => Task::Classification,
            ModelKind::Mor | ModelKind::Rc | ModelKind::Mrt => Task::Regression,
        }
    }

    pub fn is_chain(self) -> bool {
        matches!(self, ModelKind::Cc | ModelKind::Rc)
    }

    pub fn is_joint(self) -> bool {
        matches!(self, ModelKind::Mct | ModelKind::Mrt)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Br => "br",
            ModelKind::Cc => "cc",
            ModelKind::Mct => "mct",
            ModelKind::Mor => "mor",
            ModelKind::Rc => "rc",
            ModelKind::Mrt => "mrt",
        }
    }
}

/// A fitted meta-learner.
///
/// `learners` holds one learner per label in label order for BR/MOR, one per
/// chain position for CC/RC (position `j` reads `d + j` inputs), and a single
/// joint forest for MCT/MRT. `thresholds` is indexed by label, not position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainModel {
    pub kind: ModelKind,
    pub family: BaseFamily,
    pub labels: LabelSet,
    pub order: Vec<usize>,
    pub thresholds: Option<Vec<f64>>,
    pub params: TreeParams,
    pub learners: Vec<Learner>,
    pub n_features: usize,
    pub clamp_nonnegative: bool,
}

pub(crate) fn learner_seed(seed: u64, fold: u64, label: usize) -> u64 {
    derive_seed(seed, &[LEARNER_STREAM, fold, label as u64])
}

pub(crate) fn augment(x: &Matrix, extra: &[Vec<f64>]) -> Result<Matrix> {
    let mut out = x.clone();
    for c in extra {
        out = out.with_column(c)?;
    }
    Ok(out)
}

pub(crate) fn binarize(scores: &[f64], tau: f64) -> Vec<f64> {
    scores.iter().map(|&s| f64::from(s >= tau)).collect()
}

/// Fits one learner to label `label` of `y` on the given (possibly
/// augmented) inputs.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fit_position(
    family: BaseFamily,
    task: Task,
    x: &Matrix,
    y: &Matrix,
    label: usize,
    params: &TreeParams,
    seed: u64,
    fold: u64,
) -> Result<Learner> {
    Learner::fit(
        family,
        task,
        x,
        &y.select_cols(&[label]),
        params,
        learner_seed(seed, fold, label),
    )
}

pub(crate) struct FixedConfig<'a> {
    pub kind: ModelKind,
    pub family: BaseFamily,
    pub labels: &'a LabelSet,
    pub order: &'a [usize],
    pub thresholds: Option<&'a [f64]>,
    pub params: &'a TreeParams,
    pub seed: u64,
    pub fold: u64,
    pub clamp_nonnegative: bool,
}

/// Fits a model for one fixed configuration. Chains train position `j` on the
/// inputs augmented with the chain's own predictions for the earlier
/// positions on the same rows.
pub(crate) fn fit_fixed(cfg: &FixedConfig, x: &Matrix, y: &Matrix) -> Result<ChainModel> {
    let task = cfg.kind.task();
    let q = y.cols();
    if x.rows() != y.rows() || x.rows() == 0 {
        return Err(Error::invalid(
            "features and targets must have the same nonzero row count",
        ));
    }
    if cfg.labels.len() != q {
        return Err(Error::invalid("label set does not match target width"));
    }
    let learners = match cfg.kind {
        ModelKind::Br | ModelKind::Mor => (0..q)
            .map(|l| fit_position(cfg.family, task, x, y, l, cfg.params, cfg.seed, cfg.fold))
            .collect::<Result<Vec<_>>>()?,
        ModelKind::Mct | ModelKind::Mrt => {
            if cfg.family != BaseFamily::Forest {
                return Err(Error::invalid(
                    "joint multi-output models need the forest family",
                ));
            }
            vec![Learner::fit(
                cfg.family,
                task,
                x,
                y,
                cfg.params,
                learner_seed(cfg.seed, cfg.fold, q),
            )?]
        }
        ModelKind::Cc | ModelKind::Rc => {
            let mut learners = Vec::with_capacity(q);
            let mut extra: Vec<Vec<f64>> = Vec::with_capacity(q);
            for (j, &label) in cfg.order.iter().enumerate() {
                let xa = augment(x, &extra)?;
                let l = fit_position(
                    cfg.family, task, &xa, y, label, cfg.params, cfg.seed, cfg.fold,
                )?;
                if j + 1 < q {
                    let s = l.predict(&xa)?.column(0);
                    extra.push(match cfg.thresholds {
                        Some(t) => binarize(&s, t[label]),
                        None => s,
                    });
                }
                learners.push(l);
            }
            learners
        }
    };
    Ok(ChainModel {
        kind: cfg.kind,
        family: cfg.family,
        labels: cfg.labels.clone(),
        order: cfg.order.to_vec(),
        thresholds: cfg.thresholds.map(<[f64]>::to_vec),
        params: *cfg.params,
        learners,
        n_features: x.cols(),
        clamp_nonnegative: cfg.clamp_nonnegative,
    })
}

impl ChainModel {
    pub fn q(&self) -> usize {
        self.labels.len()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.n_features {
            return Err(Error::invalid(format!(
                "model expects {} feature columns, got {}",
                self.n_features,
                x.cols()
            )));
        }
        Ok(())
    }

    /// Row-by-label scores in label order: probabilities for classification,
    /// unclamped predictions for regression. Chains feed each position's
    /// binarised (classification) or raw (regression) output forward.
    pub fn scores(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let q = self.q();
        let mut cols = vec![Vec::new(); q];
        match self.kind {
            ModelKind::Br | ModelKind::Mor => {
                for (l, learner) in self.learners.iter().enumerate() {
                    cols[l] = learner.predict(x)?.column(0);
                }
            }
            ModelKind::Mct | ModelKind::Mrt => return self.learners[0].predict(x),
            ModelKind::Cc | ModelKind::Rc => {
                let mut extra: Vec<Vec<f64>> = Vec::with_capacity(q);
                for (j, (&label, learner)) in self.order.iter().zip(&self.learners).enumerate() {
                    let xa = augment(x, &extra)?;
                    let s = learner.predict(&xa)?.column(0);
                    if j + 1 < q {
                        extra.push(match &self.thresholds {
                            Some(t) => binarize(&s, t[label]),
                            None => s.clone(),
                        });
                    }
                    cols[label] = s;
                }
            }
        }
        Matrix::from_columns(&cols)
    }

    /// The input matrix each learner sees: `x` itself for independent and
    /// joint models, `x` plus the earlier chain outputs for chains.
    pub fn learner_inputs(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        self.check_input(x)?;
        if !self.kind.is_chain() {
            return Ok(vec![x.clone(); self.learners.len()]);
        }
        let mut extra: Vec<Vec<f64>> = Vec::new();
        let mut out = Vec::with_capacity(self.learners.len());
        for (&label, learner) in self.order.iter().zip(&self.learners) {
            let xa = augment(x, &extra)?;
            let s = learner.predict(&xa)?.column(0);
            extra.push(match &self.thresholds {
                Some(t) => binarize(&s, t[label]),
                None => s,
            });
            out.push(xa);
        }
        Ok(out)
    }

    /// Binary predictions `score >= τ_label`.
    pub fn predict_labels(&self, x: &Matrix) -> Result<LabelMatrix> {
        let tau = self
            .thresholds
            .as_ref()
            .filter(|_| self.kind.task() == Task::Classification)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "{} is not a classification model",
                    self.kind.name()
                ))
            })?;
        let s = self.scores(x)?;
        let bits = (0..s.rows())
            .flat_map(|i| {
                s.row(i)
                    .iter()
                    .zip(tau)
                    .map(|(&v, &t)| u8::from(v >= t))
                    .collect::<Vec<_>>()
            })
            .collect();
        LabelMatrix::new(self.labels.clone(), s.rows(), bits)
    }

    /// Regression predictions, clamped at zero when the model says so.
    pub fn predict_regression(&self, x: &Matrix) -> Result<Matrix> {
        if self.kind.task() != Task::Regression {
            return Err(Error::invalid(format!(
                "{} is not a regression model",
                self.kind.name()
            )));
        }
        let mut s = self.scores(x)?;
        if self.clamp_nonnegative {
            clamp_nonnegative(&mut s);
        }
        Ok(s)
    }

    /// Replaces the thresholds of a classification model.
    pub fn with_thresholds(mut self, tau: Vec<f64>) -> Result<ChainModel> {
        if self.kind.task() != Task::Classification
            || tau.len() != self.q()
            || tau.iter().any(|t| !t.is_finite())
        {
            return Err(Error::invalid(
                "thresholds must be q finite values on a classification model",
            ));
        }
        self.thresholds = Some(tau);
        Ok(self)
    }
}

pub(crate) fn clamp_nonnegative(m: &mut Matrix) {
    for i in 0..m.rows() {
        for v in m.row_mut(i) {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}

fn expect_kind(model: &ChainModel, kind: ModelKind) -> Result<()> {
    if model.kind != kind {
        return Err(Error::invalid(format!(
            "expected a {} model, got {}",
            kind.name(),
            model.kind.name()
        )));
    }
    Ok(())
}

pub fn predict_br(model: &ChainModel, x: &Matrix) -> Result<LabelMatrix> {
    expect_kind(model, ModelKind::Br)?;
    model.predict_labels(x)
}

pub fn predict_cc(model: &ChainModel, x: &Matrix) -> Result<LabelMatrix> {
    expect_kind(model, ModelKind::Cc)?;
    model.predict_labels(x)
}

pub fn predict_mct(model: &ChainModel, x: &Matrix) -> Result<LabelMatrix> {
    expect_kind(model, ModelKind::Mct)?;
    model.predict_labels(x)
}

pub fn predict_regression(model: &ChainModel, x: &Matrix) -> Result<Matrix> {
    model.predict_regression(x)
}
