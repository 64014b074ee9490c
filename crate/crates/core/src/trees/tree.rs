use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::impurity::Stats;
use super::{Criterion, Task, TreeParams};
use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Samples with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub split: Option<Split>,
    /// Per-output mean of the training targets reaching this node.
    pub value: Vec<f64>,
    pub impurity: f64,
    /// Weighted count of training samples reaching this node.
    pub cover: f64,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }
}

/// A fitted tree stored as a flat node array; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub n_features: usize,
    pub n_outputs: usize,
    pub criterion: Criterion,
}

impl DecisionTree {
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        while let Some(s) = self.nodes[i].split {
            i = if x[s.feature] <= s.threshold {
                s.left
            } else {
                s.right
            };
        }
        i
    }

    pub fn predict_row(&self, x: &[f64]) -> &[f64] {
        &self.nodes[self.leaf_index(x)].value
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        check_width(x, self.n_features)?;
        let mut out = Matrix::zeros(x.rows(), self.n_outputs);
        for i in 0..x.rows() {
            out.row_mut(i).copy_from_slice(self.predict_row(x.row(i)));
        }
        Ok(out)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &DecisionTree, i: usize) -> usize {
            match t.nodes[i].split {
                None => 0,
                Some(s) => 1 + go(t, s.left).max(go(t, s.right)),
            }
        }
        go(self, 0)
    }
}

pub(crate) fn check_width(x: &Matrix, n_features: usize) -> Result<()> {
    if x.cols() != n_features {
        return Err(Error::invalid(format!(
            "model expects {n_features} features, got {}",
            x.cols()
        )));
    }
    Ok(())
}

pub(crate) fn validate_targets(y: &Matrix, task: Task, criterion: Criterion) -> Result<()> {
    if y.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("targets must be finite"));
    }
    match task {
        Task::Classification => {
            if y.as_slice().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::invalid("classification targets must be 0 or 1"));
            }
        }
        Task::Regression => {
            if criterion != Criterion::Variance {
                return Err(Error::invalid(
                    "regression trees use the variance criterion",
                ));
            }
        }
    }
    Ok(())
}

/// Fits a single tree on all rows with unit weights.
pub fn fit_tree(
    x: &Matrix,
    y: &Matrix,
    task: Task,
    params: &TreeParams,
    seed: u64,
) -> Result<DecisionTree> {
    params.validate()?;
    validate_targets(y, task, params.criterion)?;
    let weights = vec![1.0; x.rows()];
    let mut rng = rng_for(seed, &[super::forest::TREE_STREAM, 0]);
    grow(x, y, &weights, params, &mut rng)
}

/// Relative tolerance under which two split gains count as tied.
const TIE_TOL: f64 = 1e-12;

struct Grower<'a> {
    x: &'a Matrix,
    y: &'a Matrix,
    weights: &'a [f64],
    params: &'a TreeParams,
    rng: &'a mut ChaCha8Rng,
    nodes: Vec<Node>,
    n_candidates: usize,
    // Scratch buffer for the per-feature sort.
    order: Vec<(f64, usize)>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Grows a tree on the rows with positive weight. `weights` holds per-row
/// multiplicities (bootstrap counts, or all ones).
pub(crate) fn grow(
    x: &Matrix,
    y: &Matrix,
    weights: &[f64],
    params: &TreeParams,
    rng: &mut ChaCha8Rng,
) -> Result<DecisionTree> {
    if x.rows() == 0 {
        return Err(Error::invalid("cannot fit a tree on zero rows"));
    }
    if x.rows() != y.rows() || weights.len() != x.rows() {
        return Err(Error::invalid("feature, target and weight rows differ"));
    }
    let samples: Vec<usize> = (0..x.rows()).filter(|&i| weights[i] > 0.0).collect();
    if samples.is_empty() {
        return Err(Error::invalid("all sample weights are zero"));
    }
    let mut g = Grower {
        x,
        y,
        weights,
        params,
        rng,
        nodes: Vec::new(),
        n_candidates: params.features_per_node(x.cols()),
        order: Vec::with_capacity(samples.len()),
    };
    g.build(samples, 0);
    Ok(DecisionTree {
        nodes: g.nodes,
        n_features: x.cols(),
        n_outputs: y.cols(),
        criterion: params.criterion,
    })
}

impl Grower<'_> {
    fn stats(&self, samples: &[usize]) -> Stats {
        let mut s = Stats::new(self.y.cols());
        for &i in samples {
            s.add(self.weights[i], self.y.row(i));
        }
        s
    }

    fn build(&mut self, samples: Vec<usize>, depth: usize) -> usize {
        let stats = self.stats(&samples);
        let imp = stats.impurity(self.params.criterion);
        let id = self.nodes.len();
        self.nodes.push(Node {
            split: None,
            value: stats.mean(),
            impurity: imp,
            cover: stats.weight,
        });
        let min_leaf = self.params.min_samples_leaf as f64;
        if depth >= self.params.max_depth || imp <= 0.0 || stats.weight < 2.0 * min_leaf {
            return id;
        }
        let Some(best) = self.best_split(&samples, &stats, imp) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = samples
            .into_iter()
            .partition(|&i| self.x.get(i, best.feature) <= best.threshold);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id].split = Some(Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        });
        id
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let d = self.x.cols();
        if self.n_candidates >= d {
            return (0..d).collect();
        }
        let mut f = index::sample(self.rng, d, self.n_candidates).into_vec();
        f.sort_unstable();
        f
    }

    /// Exhaustive search over midpoints between consecutive distinct values.
    /// Ties go to the lowest feature index, then the lowest threshold.
    fn best_split(
        &mut self,
        samples: &[usize],
        total: &Stats,
        parent_imp: f64,
    ) -> Option<BestSplit> {
        let criterion = self.params.criterion;
        let min_leaf = self.params.min_samples_leaf as f64;
        let parent = total.weight * parent_imp;
        let min_gain = parent * TIE_TOL;
        let mut best: Option<BestSplit> = None;
        for f in self.candidate_features() {
            self.order.clear();
            self.order
                .extend(samples.iter().map(|&i| (self.x.get(i, f), i)));
            self.order
                .sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut left = Stats::new(self.y.cols());
            for k in 0..self.order.len() - 1 {
                let (v, i) = self.order[k];
                left.add(self.weights[i], self.y.row(i));
                let next = self.order[k + 1].0;
                if v >= next || left.weight < min_leaf {
                    continue;
                }
                let right = total.minus(&left);
                if right.weight < min_leaf {
                    continue;
                }
                let gain = parent
                    - left.weight * left.impurity(criterion)
                    - right.weight * right.impurity(criterion);
                let better = match &best {
                    None => gain > min_gain,
                    Some(b) => gain > b.gain + TIE_TOL * b.gain.abs().max(min_gain),
                };
                if better {
                    best = Some(BestSplit {
                        feature: f,
                        threshold: midpoint(v, next),
                        gain,
                    });
                }
            }
        }
        best
    }
}

/// A threshold `t` with `lo <= t < hi`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo / 2.0 + hi / 2.0;
    if m >= lo && m < hi {
        m
    } else {
        lo
    }
}
