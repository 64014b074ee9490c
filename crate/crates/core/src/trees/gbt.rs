use serde::{Deserialize, Serialize};

use super::tree::{check_width, grow};
use super::{Criterion, DecisionTree, TreeParams};
use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::rng::rng_for;

const GBT_STREAM: u64 = 0x6B7;
const PRIOR_CLAMP: f64 = 1e-6;
const HESSIAN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Squared error with identity link.
    Squared,
    /// Binary log-loss with logistic link.
    Logistic,
}

/// Single-output gradient-boosted trees.
///
/// `raw(x) = init_score + learning_rate * Σ stage(x)`; predictions apply the
/// link of the loss to the raw score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub stages: Vec<DecisionTree>,
    pub learning_rate: f64,
    pub init_score: f64,
    pub loss: Loss,
    pub n_features: usize,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Fits `params.n_trees` stages, each a variance-criterion regression tree
/// on the current negative gradient. Logistic stages replace leaf values by a
/// single Newton step `Σ g / Σ h` over the rows in the leaf.
pub fn fit_gbt(
    x: &Matrix,
    y: &[f64],
    loss: Loss,
    params: &TreeParams,
    seed: u64,
) -> Result<GbtModel> {
    params.validate()?;
    let n = x.rows();
    if n == 0 || y.len() != n {
        return Err(Error::invalid(
            "boosting needs matching nonempty features and targets",
        ));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("targets must be finite"));
    }
    if loss == Loss::Logistic && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("logistic loss needs 0/1 targets"));
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let init_score = match loss {
        Loss::Squared => mean,
        Loss::Logistic => {
            let p = mean.clamp(PRIOR_CLAMP, 1.0 - PRIOR_CLAMP);
            (p / (1.0 - p)).ln()
        }
    };
    let stage_params = TreeParams {
        criterion: Criterion::Variance,
        ..*params
    };
    let weights = vec![1.0; n];
    let mut raw = vec![init_score; n];
    let mut stages = Vec::with_capacity(params.n_trees);
    for s in 0..params.n_trees {
        let grad: Vec<f64> = match loss {
            Loss::Squared => y.iter().zip(&raw).map(|(t, f)| t - f).collect(),
            Loss::Logistic => y.iter().zip(&raw).map(|(t, f)| t - sigmoid(*f)).collect(),
        };
        let target = Matrix::new(n, 1, grad.clone())?;
        let mut rng = rng_for(seed, &[GBT_STREAM, s as u64]);
        let mut tree = grow(x, &target, &weights, &stage_params, &mut rng)?;
        let leaves: Vec<usize> = (0..n).map(|i| tree.leaf_index(x.row(i))).collect();
        if loss == Loss::Logistic {
            let mut num = vec![0.0; tree.nodes.len()];
            let mut den = vec![0.0; tree.nodes.len()];
            for (i, &leaf) in leaves.iter().enumerate() {
                let p = sigmoid(raw[i]);
                num[leaf] += grad[i];
                den[leaf] += p * (1.0 - p);
            }
            for (k, node) in tree.nodes.iter_mut().enumerate() {
                if node.is_leaf() {
                    node.value[0] = num[k] / den[k].max(HESSIAN_FLOOR);
                }
            }
        }
        for (f, &leaf) in raw.iter_mut().zip(&leaves) {
            *f += params.learning_rate * tree.nodes[leaf].value[0];
        }
        stages.push(tree);
    }
    Ok(GbtModel {
        stages,
        learning_rate: params.learning_rate,
        init_score,
        loss,
        n_features: x.cols(),
    })
}

impl GbtModel {
    pub fn raw_row(&self, x: &[f64]) -> f64 {
        self.raw_row_upto(x, self.stages.len())
    }

    fn raw_row_upto(&self, x: &[f64], n_stages: usize) -> f64 {
        let boost: f64 = self.stages[..n_stages]
            .iter()
            .map(|t| t.predict_row(x)[0])
            .sum();
        self.init_score + self.learning_rate * boost
    }

    pub fn link(&self, raw: f64) -> f64 {
        match self.loss {
            Loss::Squared => raw,
            Loss::Logistic => sigmoid(raw),
        }
    }

    pub fn predict_raw(&self, x: &Matrix) -> Result<Vec<f64>> {
        check_width(x, self.n_features)?;
        Ok((0..x.rows()).map(|i| self.raw_row(x.row(i))).collect())
    }

    /// Scores after the link: probabilities under logistic loss.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self
            .predict_raw(x)?
            .into_iter()
            .map(|r| self.link(r))
            .collect())
    }

    /// Linked predictions using only the first `n_stages` stages.
    pub fn predict_staged(&self, x: &Matrix, n_stages: usize) -> Result<Vec<f64>> {
        check_width(x, self.n_features)?;
        let k = n_stages.min(self.stages.len());
        Ok((0..x.rows())
            .map(|i| self.link(self.raw_row_upto(x.row(i), k)))
            .collect())
    }
}
