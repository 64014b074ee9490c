use serde::{Deserialize, Serialize};

use super::{fit_forest, fit_gbt, ForestModel, GbtModel, Loss, Task, TreeParams};
use crate::data::Matrix;
use crate::error::{Error, Result};

/// Base learner family used inside the meta-learners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseFamily {
    Forest,
    Boosted,
}

/// A fitted base learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Learner {
    Forest(ForestModel),
    Boosted(GbtModel),
}

impl Learner {
    /// Fits a learner of `family` to the target columns of `y`. Boosting is
    /// single-output only.
    pub fn fit(
        family: BaseFamily,
        task: Task,
        x: &Matrix,
        y: &Matrix,
        params: &TreeParams,
        seed: u64,
    ) -> Result<Learner> {
        let params = params.for_task(task);
        match family {
            BaseFamily::Forest => Ok(Learner::Forest(fit_forest(x, y, task, &params, seed)?)),
            BaseFamily::Boosted => {
                if y.cols() != 1 {
                    return Err(Error::invalid("boosted learners are single-output"));
                }
                let loss = match task {
                    Task::Classification => Loss::Logistic,
                    Task::Regression => Loss::Squared,
                };
                Ok(Learner::Boosted(fit_gbt(
                    x,
                    &y.column(0),
                    loss,
                    &params,
                    seed,
                )?))
            }
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Learner::Forest(f) => f.n_features,
            Learner::Boosted(g) => g.n_features,
        }
    }

    pub fn n_outputs(&self) -> usize {
        match self {
            Learner::Forest(f) => f.n_outputs,
            Learner::Boosted(_) => 1,
        }
    }

    /// Row-by-output scores (probabilities for classification).
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            Learner::Forest(f) => f.predict(x),
            Learner::Boosted(g) => Matrix::new(x.rows(), 1, g.predict(x)?),
        }
    }
}
