use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ClassificationOptions, Metric};
use crate::rng::rng_for;
use crate::trees::{Task, TreeParams};

/// Candidate label orders Σ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderSpace {
    /// Every permutation, lexicographic.
    All,
    /// `count` distinct permutations drawn from a seeded stream.
    Sample {
        count: usize,
        seed: u64,
    },
    Explicit(Vec<Vec<usize>>),
}

/// Threshold grid T, either one grid for every label or one per label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdGrid {
    Shared(Vec<f64>),
    PerLabel(Vec<Vec<f64>>),
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        ThresholdGrid::Shared((1..=19).map(|k| k as f64 / 20.0).collect())
    }
}

impl ThresholdGrid {
    /// Sorted, deduplicated grid for each of `q` labels.
    pub fn resolve(&self, q: usize) -> Result<Vec<Vec<f64>>> {
        let grids = match self {
            ThresholdGrid::Shared(g) => vec![g.clone(); q],
            ThresholdGrid::PerLabel(gs) => {
                if gs.len() != q {
                    return Err(Error::invalid(format!(
                        "per-label threshold grid has {} entries for {q} labels",
                        gs.len()
                    )));
                }
                gs.clone()
            }
        };
        grids
            .into_iter()
            .map(|mut g| {
                if g.is_empty() {
                    return Err(Error::invalid("threshold grid is empty"));
                }
                if g.iter().any(|t| !(0.0..=1.0).contains(t)) {
                    return Err(Error::invalid("thresholds must lie in [0, 1]"));
                }
                g.sort_by(f64::total_cmp);
                g.dedup();
                Ok(g)
            })
            .collect()
    }
}

/// Joint search space: hyperparameter grid Θ, thresholds T, orders Σ, folds K
/// and the selection metric F.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub params: Vec<TreeParams>,
    pub thresholds: ThresholdGrid,
    pub orders: OrderSpace,
    pub folds: usize,
    /// Defaults to Weighted-F1 for classification and aRMSE for regression.
    pub metric: Option<Metric>,
    pub metric_options: ClassificationOptions,
    /// Clamp regression outputs at zero.
    pub clamp_nonnegative: bool,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            params: vec![TreeParams::default()],
            thresholds: ThresholdGrid::default(),
            orders: OrderSpace::All,
            folds: 5,
            metric: None,
            metric_options: ClassificationOptions::default(),
            clamp_nonnegative: true,
        }
    }
}

impl SearchSpace {
    pub fn metric_for(&self, task: Task) -> Result<Metric> {
        let m = self.metric.unwrap_or(match task {
            Task::Classification => Metric::WeightedF1,
            Task::Regression => Metric::Armse,
        });
        if m.is_classification() != (task == Task::Classification) {
            return Err(Error::invalid(format!(
                "metric {m} does not fit a {task:?} task"
            )));
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.is_empty() {
            return Err(Error::invalid("hyperparameter grid is empty"));
        }
        for p in &self.params {
            p.validate()?;
        }
        if self.folds < 2 {
            return Err(Error::invalid("need at least 2 folds"));
        }
        if let OrderSpace::Sample { count: 0, .. } = self.orders {
            return Err(Error::invalid("order sample is empty"));
        }
        if let OrderSpace::Explicit(v) = &self.orders {
            if v.is_empty() {
                return Err(Error::invalid("order list is empty"));
            }
        }
        Ok(())
    }

    /// Materialises Σ for `q` labels.
    pub fn order_candidates(&self, q: usize) -> Result<Vec<Vec<usize>>> {
        match &self.orders {
            OrderSpace::All => {
                if q > 9 {
                    return Err(Error::invalid(format!(
                        "{q}! orders is too many to enumerate; use a sampled order space"
                    )));
                }
                Ok(permutations(q))
            }
            OrderSpace::Sample { count, seed } => {
                if q <= 9 && *count >= factorial(q) {
                    return Ok(permutations(q));
                }
                let mut rng = rng_for(*seed, &[0x5A]);
                let mut seen = HashSet::new();
                let mut out = Vec::with_capacity(*count);
                let mut perm: Vec<usize> = (0..q).collect();
                while out.len() < *count {
                    perm.shuffle(&mut rng);
                    if seen.insert(perm.clone()) {
                        out.push(perm.clone());
                    }
                }
                Ok(out)
            }
            OrderSpace::Explicit(orders) => {
                for o in orders {
                    let mut s = o.clone();
                    s.sort_unstable();
                    if s != (0..q).collect::<Vec<_>>() {
                        return Err(Error::invalid(format!(
                            "{o:?} is not a permutation of 0..{q}"
                        )));
                    }
                }
                Ok(orders.clone())
            }
        }
    }
}

fn factorial(n: usize) -> usize {
    (1..=n).product()
}

/// All permutations of `0..q` in lexicographic order.
pub fn permutations(q: usize) -> Vec<Vec<usize>> {
    let mut cur: Vec<usize> = (0..q).collect();
    let mut out = vec![cur.clone()];
    loop {
        let Some(i) = (1..q).rev().find(|&i| cur[i - 1] < cur[i]) else {
            return out;
        };
        let j = (i..q).rev().find(|&j| cur[j] > cur[i - 1]).unwrap();
        cur.swap(i - 1, j);
        cur[i..].reverse();
        out.push(cur.clone());
    }
}
