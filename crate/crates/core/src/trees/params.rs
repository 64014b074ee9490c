use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Gini,
    Entropy,
    Variance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

/// Hyperparameters shared by every tree learner. `learning_rate` is only read
/// by boosting, `bootstrap` only by forests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Fraction of features drawn as split candidates at each node.
    pub max_features: f64,
    pub learning_rate: f64,
    pub criterion: Criterion,
    pub bootstrap: bool,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 12,
            min_samples_leaf: 5,
            max_features: 1.0 / 3.0,
            learning_rate: 0.1,
            criterion: Criterion::Gini,
            bootstrap: true,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::invalid("tree count must be at least 1"));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::invalid("min_samples_leaf must be at least 1"));
        }
        if !(self.max_features > 0.0 && self.max_features <= 1.0) {
            return Err(Error::invalid(format!(
                "max_features {} not in (0, 1]",
                self.max_features
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }

    /// Number of candidate features per node out of `d`.
    pub fn features_per_node(&self, d: usize) -> usize {
        ((self.max_features * d as f64).round() as usize).clamp(1, d.max(1))
    }

    /// Same parameters with the criterion suited to `task`: regression always
    /// uses variance, classification keeps a configured class criterion.
    pub fn for_task(mut self, task: Task) -> Self {
        if task == Task::Regression {
            self.criterion = Criterion::Variance;
        }
        self
    }
}
