//! Feature importance: impurity decrease, permutation and path-dependent
//! TreeSHAP, plus top-k aggregation across models.

mod mdi;
mod permutation;
mod shap;

use serde::{Deserialize, Serialize};

pub use mdi::{mdi_importance, Mdi};
pub use permutation::permutation_importance;
pub use shap::{expected_value, shap_forest, shap_gbt, shap_tree, tree_shap_row, ShapExplanation};

use crate::data::{LabelMatrix, Matrix};
use crate::error::{Error, Result};
use crate::meta::ChainModel;
use crate::metrics::{
    classification_report_with, regression_report, ClassificationOptions, Metric,
};
use crate::trees::Task;

/// Floor used by the display log transform.
pub const LOG_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    Impurity,
    Permutation,
    Shap,
}

impl Technique {
    pub const ALL: [Technique; 3] = [Technique::Impurity, Technique::Permutation, Technique::Shap];

    pub fn name(self) -> &'static str {
        match self {
            Technique::Impurity => "impurity",
            Technique::Permutation => "permutation",
            Technique::Shap => "shap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTable {
    pub model: String,
    pub technique: Technique,
    pub features: Vec<String>,
    pub scores: Vec<f64>,
    pub normalized: bool,
}

impl ImportanceTable {
    pub fn new(
        model: &str,
        technique: Technique,
        features: Vec<String>,
        scores: Vec<f64>,
        normalized: bool,
    ) -> Result<Self> {
        if features.len() != scores.len() {
            return Err(Error::invalid(
                "importance scores and feature names differ in length",
            ));
        }
        Ok(ImportanceTable {
            model: model.to_string(),
            technique,
            features,
            scores,
            normalized,
        })
    }

    /// Feature indices of the `k` largest scores, ties to the lower index.
    pub fn top_k(&self, k: usize) -> Result<Vec<usize>> {
        top_k(&self.scores, k)
    }
}

pub fn top_k(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > scores.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {} features",
            scores.len()
        )));
    }
    let key = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| key(scores[b]).total_cmp(&key(scores[a])).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

fn average_truncated(per_learner: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut acc = vec![0.0; d];
    for v in per_learner {
        for (a, s) in acc.iter_mut().zip(v) {
            *a += s;
        }
    }
    let n = per_learner.len().max(1) as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Impurity importance of a fitted meta-learner over its original features.
/// Each learner's decreases are normalised, restricted to the original
/// columns and renormalised, then averaged across learners.
pub fn model_mdi(model: &ChainModel) -> Vec<f64> {
    let d = model.n_features;
    let per: Vec<Vec<f64>> = model
        .learners
        .iter()
        .map(|l| {
            let g = &mdi_importance(l).gain[..d];
            let total: f64 = g.iter().sum();
            if total > 0.0 {
                g.iter().map(|v| v / total).collect()
            } else {
                vec![0.0; d]
            }
        })
        .collect();
    let avg = average_truncated(&per, d);
    let total: f64 = avg.iter().sum();
    if total > 0.0 {
        avg.iter().map(|v| v / total).collect()
    } else {
        avg
    }
}

/// Mean |φ| per original feature, averaged over learners and outputs.
pub fn model_shap(model: &ChainModel, x: &Matrix) -> Result<Vec<f64>> {
    let inputs = model.learner_inputs(x)?;
    let mut per = Vec::new();
    for (l, xi) in model.learners.iter().zip(&inputs) {
        for e in shap_tree(l, xi)? {
            per.push(e.mean_abs());
        }
    }
    Ok(average_truncated(&per, model.n_features))
}

/// Loss of a meta-learner on `(x, y)` under `metric` (smaller is better).
pub fn model_loss(
    model: &ChainModel,
    x: &Matrix,
    y: &Matrix,
    metric: Metric,
    opts: ClassificationOptions,
) -> Result<f64> {
    let value = match model.kind.task() {
        Task::Classification => {
            let pred = model.predict_labels(x)?;
            let bits = (0..y.rows())
                .flat_map(|i| {
                    y.row(i)
                        .iter()
                        .map(|&v| u8::from(v != 0.0))
                        .collect::<Vec<_>>()
                })
                .collect();
            let truth = LabelMatrix::new(model.labels.clone(), y.rows(), bits)?;
            classification_report_with(&truth, &pred, opts)?.get(metric)
        }
        Task::Regression => regression_report(y, &model.predict_regression(x)?)?.get(metric),
    };
    let v = value
        .ok_or_else(|| Error::invalid(format!("metric {metric} does not apply to this model")))?;
    Ok(metric.as_loss(v))
}

/// Permutation importance of a meta-learner using one scalar metric over
/// all labels jointly.
pub fn model_permutation(
    model: &ChainModel,
    x: &Matrix,
    y: &Matrix,
    metric: Metric,
    opts: ClassificationOptions,
    repeats: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    permutation_importance(
        |xp| model_loss(model, xp, y, metric, opts),
        x,
        repeats,
        seed,
    )
}

/// Cross-model summary of top-k memberships and log-scaled scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossModelSummary {
    pub models: Vec<String>,
    /// Features that appear in at least one model's top-k, most frequent
    /// first, ties by feature position.
    pub features: Vec<String>,
    /// Number of models whose top-k contains each feature.
    pub counts: Vec<usize>,
    /// `membership[f][m]` is true when feature `f` is in model `m`'s top-k.
    pub membership: Vec<Vec<bool>>,
    /// `ln(1 + max(score, 0) / ε)` per listed feature and model.
    pub log_scores: Vec<Vec<f64>>,
}

pub fn log_score(score: f64) -> f64 {
    (1.0 + score.max(0.0) / LOG_EPSILON).ln()
}

pub fn aggregate_cross_model(tables: &[ImportanceTable], k: usize) -> Result<CrossModelSummary> {
    let Some(first) = tables.first() else {
        return Err(Error::invalid("no importance tables to aggregate"));
    };
    if tables.iter().any(|t| t.features != first.features) {
        return Err(Error::invalid(
            "importance tables do not share a feature space",
        ));
    }
    let d = first.features.len();
    let mut member = vec![vec![false; tables.len()]; d];
    for (m, t) in tables.iter().enumerate() {
        for f in t.top_k(k)? {
            member[f][m] = true;
        }
    }
    let counts: Vec<usize> = member
        .iter()
        .map(|r| r.iter().filter(|&&b| b).count())
        .collect();
    let mut listed: Vec<usize> = (0..d).filter(|&f| counts[f] > 0).collect();
    listed.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    Ok(CrossModelSummary {
        models: tables.iter().map(|t| t.model.clone()).collect(),
        features: listed.iter().map(|&f| first.features[f].clone()).collect(),
        counts: listed.iter().map(|&f| counts[f]).collect(),
        membership: listed.iter().map(|&f| member[f].clone()).collect(),
        log_scores: listed
            .iter()
            .map(|&f| tables.iter().map(|t| log_score(t.scores[f])).collect())
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::rng::rng_for;
    use crate::trees::{
        fit_forest, fit_gbt, Criterion, DecisionTree, Learner, Loss, Node, Split, TreeParams,
    };

    fn names(d: usize) -> Vec<String> {
        (0..d).map(|i| format!("f{i}")).collect()
    }

    fn node(
        split: Option<(usize, f64, usize, usize)>,
        value: f64,
        impurity: f64,
        cover: f64,
    ) -> Node {
        Node {
            split: split.map(|(feature, threshold, left, right)| Split {
                feature,
                threshold,
                left,
                right,
            }),
            value: vec![value],
            impurity,
            cover,
        }
    }

    fn tree(nodes: Vec<Node>, d: usize) -> DecisionTree {
        DecisionTree {
            nodes,
            n_features: d,
            n_outputs: 1,
            criterion: Criterion::Gini,
        }
    }

    fn forest_of(trees: Vec<DecisionTree>) -> Learner {
        let d = trees[0].n_features;
        Learner::Forest(crate::trees::ForestModel {
            trees,
            task: Task::Classification,
            params: TreeParams::default(),
            seed: 0,
            n_features: d,
            n_outputs: 1,
        })
    }

    #[test]
    fn single_split_owns_all_importance() {
        let t = tree(
            vec![
                node(Some((3, 0.5, 1, 2)), 0.5, 0.5, 10.0),
                node(None, 0.0, 0.0, 5.0),
                node(None, 1.0, 0.0, 5.0),
            ],
            5,
        );
        let m = mdi_importance(&forest_of(vec![t]));
        assert_eq!(m.normalized(), vec![0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(m.split_count, vec![0, 0, 0, 1, 0]);
    }

    #[test]
    fn depth_two_hand_computed() {
        // root: 8 samples gini 0.5; left 4 samples gini 0.375 splits on f1
        // into pure halves; right 4 samples pure
        let t = tree(
            vec![
                node(Some((0, 0.5, 1, 4)), 0.5, 0.5, 8.0),
                node(Some((1, 0.5, 2, 3)), 0.25, 0.375, 4.0),
                node(None, 0.0, 0.0, 3.0),
                node(None, 1.0, 0.0, 1.0),
                node(None, 1.0, 0.0, 4.0),
            ],
            3,
        );
        let m = mdi_importance(&forest_of(vec![t]));
        assert!((m.gain[0] - (8.0 * 0.5 - 4.0 * 0.375)).abs() < 1e-15);
        assert!((m.gain[1] - 4.0 * 0.375).abs() < 1e-15);
        assert_eq!(m.gain[2], 0.0);
        let n = m.normalized();
        assert!((n[0] - 2.5 / 4.0).abs() < 1e-15);
        assert!((n.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn no_splits_gives_zero_table() {
        let t = tree(vec![node(None, 0.3, 0.21, 10.0)], 2);
        assert_eq!(
            mdi_importance(&forest_of(vec![t])).normalized(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn stump_shap_is_prediction_minus_base() {
        let t = tree(
            vec![
                node(Some((1, 0.5, 1, 2)), 0.5, 0.5, 10.0),
                node(None, 0.0, 0.0, 5.0),
                node(None, 1.0, 0.0, 5.0),
            ],
            3,
        );
        assert_eq!(expected_value(&t, 0), 0.5);
        let phi = tree_shap_row(&t, &[9.0, 0.9, -4.0], 0);
        assert_eq!(phi, vec![0.0, 0.5, 0.0]);
        let phi = tree_shap_row(&t, &[9.0, 0.1, -4.0], 0);
        assert_eq!(phi, vec![0.0, -0.5, 0.0]);
    }

    #[test]
    fn symmetric_duplicate_features_share_credit() {
        // f0 then f1 on the left, f1 then f0 on the right, identical covers
        let t = tree(
            vec![
                node(Some((0, 0.5, 1, 4)), 0.5, 0.0, 8.0),
                node(Some((1, 0.5, 2, 3)), 0.0, 0.0, 4.0),
                node(None, 0.0, 0.0, 2.0),
                node(None, 1.0, 0.0, 2.0),
                node(Some((1, 0.5, 5, 6)), 0.0, 0.0, 4.0),
                node(None, 1.0, 0.0, 2.0),
                node(None, 2.0, 0.0, 2.0),
            ],
            2,
        );
        for x in [[0.0, 0.0], [1.0, 1.0]] {
            let phi = tree_shap_row(&t, &x, 0);
            assert!((phi[0] - phi[1]).abs() < 1e-12, "{phi:?}");
        }
    }

    fn fixture(n: usize, seed: u64) -> (Matrix, Matrix) {
        let mut rng = rng_for(seed, &[2]);
        let rows: Vec<[f64; 4]> = (0..n)
            .map(|_| [rng.gen(), rng.gen(), rng.gen(), rng.gen()])
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| f64::from(r[1] > 0.5)).collect();
        (
            Matrix::from_rows(&rows).unwrap(),
            Matrix::new(n, 1, y).unwrap(),
        )
    }

    #[test]
    fn local_accuracy_for_forest_and_gbt() {
        let (x, y) = fixture(80, 1);
        let p = TreeParams {
            n_trees: 5,
            max_depth: 4,
            min_samples_leaf: 2,
            ..Default::default()
        };
        let f = fit_forest(&x, &y, Task::Classification, &p, 0).unwrap();
        let e = &shap_forest(&f, &x).unwrap()[0];
        let pred = f.predict(&x).unwrap();
        for i in 0..x.rows() {
            let s = e.base + e.phi.row(i).iter().sum::<f64>();
            assert!((s - pred.get(i, 0)).abs() < 1e-9);
        }
        let g = fit_gbt(&x, &y.column(0), Loss::Logistic, &p, 0).unwrap();
        let e = shap_gbt(&g, &x).unwrap();
        let raw = g.predict_raw(&x).unwrap();
        for (i, r) in raw.iter().enumerate() {
            let s = e.base + e.phi.row(i).iter().sum::<f64>();
            assert!((s - r).abs() < 1e-9);
        }
        assert!(shap_gbt(&g, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn permutation_ignores_unused_columns_and_is_seeded() {
        let (x, y) = fixture(60, 3);
        let p = TreeParams {
            n_trees: 5,
            max_features: 1.0,
            ..Default::default()
        };
        let f = fit_forest(&x, &y, Task::Classification, &p, 0).unwrap();
        let used = mdi_importance(&Learner::Forest(f.clone())).split_count;
        let loss = |xp: &Matrix| -> Result<f64> {
            let s = f.predict(xp)?;
            Ok((0..xp.rows())
                .map(|i| (s.get(i, 0) - y.get(i, 0)).powi(2))
                .sum::<f64>())
        };
        let a = permutation_importance(loss, &x, 3, 7).unwrap();
        let b = permutation_importance(loss, &x, 3, 7).unwrap();
        assert_eq!(a, b);
        for (imp, c) in a.iter().zip(&used) {
            if *c == 0 {
                assert_eq!(*imp, 0.0);
            }
        }
        assert!(a[1] > 0.0);
        assert_eq!(top_k(&a, 1).unwrap(), vec![1]);
        assert!(permutation_importance(loss, &x, 0, 7).is_err());
    }

    #[test]
    fn cross_model_counts() {
        let t = |m: &str, s: Vec<f64>| {
            ImportanceTable::new(m, Technique::Shap, names(3), s, false).unwrap()
        };
        let tables = vec![t("a", vec![0.9, 0.1, 0.0]), t("b", vec![0.1, 0.9, 0.0])];
        let s = aggregate_cross_model(&tables, 1).unwrap();
        assert_eq!(s.features, vec!["f0", "f1"]);
        assert_eq!(s.counts, vec![1, 1]);
        let s = aggregate_cross_model(&tables, 2).unwrap();
        assert_eq!(s.counts, vec![2, 2]);
        assert!(!s.features.contains(&"f2".to_string()));
        assert!(aggregate_cross_model(&tables, 4).is_err());
        let five: Vec<_> = (0..5)
            .map(|i| t(&format!("m{i}"), vec![1.0, 0.5, 0.0]))
            .collect();
        let s = aggregate_cross_model(&five, 1).unwrap();
        assert_eq!((s.features[0].as_str(), s.counts[0]), ("f0", 5));
        assert_eq!(log_score(0.0), 0.0);
        assert!((log_score(1.0) - (1.0 + 1e12f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn top_k_breaks_ties_by_position() {
        assert_eq!(top_k(&[0.5, 0.7, 0.5, f64::NAN], 3).unwrap(), vec![1, 0, 2]);
    }
}
