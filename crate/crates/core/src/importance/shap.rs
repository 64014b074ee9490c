use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::trees::{DecisionTree, ForestModel, GbtModel, Learner};

const NO_FEATURE: usize = usize::MAX;

/// Per-row Shapley values for one model output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation {
    /// Rows by features.
    pub phi: Matrix,
    pub base: f64,
}

impl ShapExplanation {
    /// Mean absolute Shapley value per feature.
    pub fn mean_abs(&self) -> Vec<f64> {
        let n = self.phi.rows() as f64;
        (0..self.phi.cols())
            .map(|f| self.phi.column(f).iter().map(|v| v.abs()).sum::<f64>() / n)
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct PathElem {
    feature: usize,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElem>, zero: f64, one: f64, feature: usize) {
    let l = path.len();
    path.push(PathElem {
        feature,
        zero,
        one,
        weight: if l == 0 { 1.0 } else { 0.0 },
    });
    for i in (0..l).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / (l + 1) as f64;
        path[i].weight = zero * path[i].weight * (l - i) as f64 / (l + 1) as f64;
    }
}

fn unwind(path: &mut Vec<PathElem>, idx: usize) {
    let depth = path.len() - 1;
    let PathElem { zero, one, .. } = path[idx];
    let mut next = path[depth].weight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next * (depth + 1) as f64 / ((i + 1) as f64 * one);
            next = tmp - path[i].weight * zero * (depth - i) as f64 / (depth + 1) as f64;
        } else {
            path[i].weight = path[i].weight * (depth + 1) as f64 / (zero * (depth - i) as f64);
        }
    }
    for i in idx..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero = path[i + 1].zero;
        path[i].one = path[i + 1].one;
    }
    path.pop();
}

fn unwound_sum(path: &[PathElem], idx: usize) -> f64 {
    let depth = path.len() - 1;
    let PathElem { zero, one, .. } = path[idx];
    let mut total = 0.0;
    if one != 0.0 {
        let mut next = path[depth].weight;
        for i in (0..depth).rev() {
            let tmp = next / ((i + 1) as f64 * one);
            total += tmp;
            next = path[i].weight - tmp * zero * (depth - i) as f64;
        }
    } else if zero != 0.0 {
        for i in (0..depth).rev() {
            total += path[i].weight / (zero * (depth - i) as f64);
        }
    }
    total * (depth + 1) as f64
}

struct Walker<'a> {
    tree: &'a DecisionTree,
    x: &'a [f64],
    output: usize,
    phi: &'a mut [f64],
}

impl Walker<'_> {
    fn recurse(
        &mut self,
        node: usize,
        mut path: Vec<PathElem>,
        zero: f64,
        one: f64,
        feature: usize,
    ) {
        extend(&mut path, zero, one, feature);
        let n = &self.tree.nodes[node];
        match n.split {
            None => {
                let v = n.value[self.output];
                for i in 1..path.len() {
                    let w = unwound_sum(&path, i);
                    let e = path[i];
                    self.phi[e.feature] += w * (e.one - e.zero) * v;
                }
            }
            Some(s) => {
                let (hot, cold) = if self.x[s.feature] <= s.threshold {
                    (s.left, s.right)
                } else {
                    (s.right, s.left)
                };
                let cover = n.cover;
                let mut in_zero = 1.0;
                let mut in_one = 1.0;
                if let Some(k) = (1..path.len()).find(|&k| path[k].feature == s.feature) {
                    in_zero = path[k].zero;
                    in_one = path[k].one;
                    unwind(&mut path, k);
                }
                let hz = self.tree.nodes[hot].cover / cover;
                let cz = self.tree.nodes[cold].cover / cover;
                self.recurse(hot, path.clone(), hz * in_zero, in_one, s.feature);
                self.recurse(cold, path, cz * in_zero, 0.0, s.feature);
            }
        }
    }
}

/// Cover-weighted mean leaf value: the expectation of the tree output under
/// the training distribution the tree saw.
pub fn expected_value(tree: &DecisionTree, output: usize) -> f64 {
    fn go(tree: &DecisionTree, node: usize, output: usize) -> f64 {
        let n = &tree.nodes[node];
        match n.split {
            None => n.value[output],
            Some(s) => {
                let l = &tree.nodes[s.left];
                let r = &tree.nodes[s.right];
                (l.cover * go(tree, s.left, output) + r.cover * go(tree, s.right, output)) / n.cover
            }
        }
    }
    go(tree, 0, output)
}

/// Path-dependent TreeSHAP values of one row for one tree output.
pub fn tree_shap_row(tree: &DecisionTree, x: &[f64], output: usize) -> Vec<f64> {
    let mut phi = vec![0.0; tree.n_features];
    let mut w = Walker {
        tree,
        x,
        output,
        phi: &mut phi,
    };
    w.recurse(0, Vec::new(), 1.0, 1.0, NO_FEATURE);
    phi
}

fn check(x: &Matrix, d: usize) -> Result<()> {
    if x.cols() != d {
        return Err(Error::invalid(format!(
            "model expects {d} feature columns, got {}",
            x.cols()
        )));
    }
    if x.rows() == 0 {
        return Err(Error::invalid("no rows to explain"));
    }
    Ok(())
}

/// Weighted sum of several trees' explanations for one output.
fn explain_trees(
    trees: &[DecisionTree],
    scale: f64,
    offset: f64,
    x: &Matrix,
    output: usize,
) -> ShapExplanation {
    let d = x.cols();
    let rows: Vec<Vec<f64>> = (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let mut acc = vec![0.0; d];
            for t in trees {
                for (a, p) in acc.iter_mut().zip(tree_shap_row(t, x.row(i), output)) {
                    *a += scale * p;
                }
            }
            acc
        })
        .collect();
    let base = offset + scale * trees.iter().map(|t| expected_value(t, output)).sum::<f64>();
    ShapExplanation {
        phi: Matrix::new(x.rows(), d, rows.into_iter().flatten().collect()).expect("shape"),
        base,
    }
}

/// One explanation per forest output; values average over trees like the
/// forest prediction does.
pub fn shap_forest(model: &ForestModel, x: &Matrix) -> Result<Vec<ShapExplanation>> {
    check(x, model.n_features)?;
    let scale = 1.0 / model.trees.len() as f64;
    Ok((0..model.n_outputs)
        .map(|o| explain_trees(&model.trees, scale, 0.0, x, o))
        .collect())
}

/// Explanation of the raw (pre-link) boosted score.
pub fn shap_gbt(model: &GbtModel, x: &Matrix) -> Result<ShapExplanation> {
    check(x, model.n_features)?;
    Ok(explain_trees(
        &model.stages,
        model.learning_rate,
        model.init_score,
        x,
        0,
    ))
}

/// Explanations for every output of a learner (forest probabilities or
/// boosted raw scores).
pub fn shap_tree(model: &Learner, x: &Matrix) -> Result<Vec<ShapExplanation>> {
    match model {
        Learner::Forest(f) => shap_forest(f, x),
        Learner::Boosted(g) => Ok(vec![shap_gbt(g, x)?]),
    }
}
