use log::warn;
use serde::{Deserialize, Serialize};

use crate::trees::{DecisionTree, Learner};

/// Impurity-decrease importance of one tree model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mdi {
    /// Summed weighted impurity decrease per feature.
    pub gain: Vec<f64>,
    /// Number of internal nodes splitting on each feature.
    pub split_count: Vec<u64>,
}

impl Mdi {
    fn new(d: usize) -> Mdi {
        Mdi {
            gain: vec![0.0; d],
            split_count: vec![0; d],
        }
    }

    fn add_tree(&mut self, tree: &DecisionTree, scale: f64) {
        for n in &tree.nodes {
            if let Some(s) = n.split {
                let l = &tree.nodes[s.left];
                let r = &tree.nodes[s.right];
                let dec = n.cover * n.impurity - l.cover * l.impurity - r.cover * r.impurity;
                self.gain[s.feature] += scale * dec;
                self.split_count[s.feature] += 1;
            }
        }
    }

    /// Gains scaled to sum to one; all zeros when the model never splits.
    pub fn normalized(&self) -> Vec<f64> {
        let total: f64 = self.gain.iter().sum();
        if self.split_count.iter().all(|&c| c == 0) || total <= 0.0 {
            warn!("model has no internal nodes; impurity importance is all zero");
            return vec![0.0; self.gain.len()];
        }
        self.gain.iter().map(|g| g / total).collect()
    }
}

/// Summed over the trees of a forest or the stages of a boosted model. For
/// boosted models the decrease is the squared-error reduction on the stage
/// gradients, i.e. the loss-reduction gain each stage optimised.
pub fn mdi_importance(model: &Learner) -> Mdi {
    match model {
        Learner::Forest(f) => {
            let mut m = Mdi::new(f.n_features);
            for t in &f.trees {
                m.add_tree(t, 1.0);
            }
            m
        }
        Learner::Boosted(g) => {
            let mut m = Mdi::new(g.n_features);
            for t in &g.stages {
                m.add_tree(t, 1.0);
            }
            m
        }
    }
}
