use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{check_width, grow, validate_targets};
use super::{DecisionTree, Task, TreeParams};
use crate::data::Matrix;
use crate::error::Result;
use crate::rng::rng_for;

pub(crate) const TREE_STREAM: u64 = 0x7EE;

/// Bagged ensemble of (possibly multi-output) trees. Predictions are the
/// arithmetic mean of member-tree predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
    pub task: Task,
    pub params: TreeParams,
    pub seed: u64,
    pub n_features: usize,
    pub n_outputs: usize,
}

/// Fits a forest. Tree `t` draws its bootstrap sample and per-node feature
/// subsets from its own seeded stream, so the result does not depend on how
/// many worker threads build the trees.
pub fn fit_forest(
    x: &Matrix,
    y: &Matrix,
    task: Task,
    params: &TreeParams,
    seed: u64,
) -> Result<ForestModel> {
    params.validate()?;
    validate_targets(y, task, params.criterion)?;
    let n = x.rows();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(seed, &[TREE_STREAM, t as u64]);
            let weights = if params.bootstrap && n > 0 {
                let mut w = vec![0.0; n];
                for _ in 0..n {
                    w[rng.gen_range(0..n)] += 1.0;
                }
                w
            } else {
                vec![1.0; n]
            };
            grow(x, y, &weights, params, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForestModel {
        trees,
        task,
        params: *params,
        seed,
        n_features: x.cols(),
        n_outputs: y.cols(),
    })
}

impl ForestModel {
    /// Row-by-output score matrix: averaged leaf probabilities for
    /// classification, averaged means for regression.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        check_width(x, self.n_features)?;
        let scale = 1.0 / self.trees.len() as f64;
        let rows: Vec<Vec<f64>> = (0..x.rows())
            .into_par_iter()
            .map(|i| {
                let row = x.row(i);
                let mut acc = vec![0.0; self.n_outputs];
                for t in &self.trees {
                    for (a, v) in acc.iter_mut().zip(t.predict_row(row)) {
                        *a += v;
                    }
                }
                acc.iter_mut().for_each(|a| *a *= scale);
                acc
            })
            .collect();
        Matrix::new(
            x.rows(),
            self.n_outputs,
            rows.into_iter().flatten().collect(),
        )
    }
}
