use std::collections::BTreeMap;

use super::Criterion;
use crate::error::{Error, Result};

/// Node impurity of one or more target columns under `criterion`, averaged
/// without weights across columns.
///
/// Gini is `1 - Σ p_c²`, entropy is `-Σ p_c log₂ p_c` over the distinct
/// values of a column, variance is the mean squared deviation.
pub fn impurity(columns: &[&[f64]], criterion: Criterion) -> Result<f64> {
    let n = columns.first().map_or(0, |c| c.len());
    if n == 0 || columns.iter().any(|c| c.len() != n) {
        return Err(Error::invalid("impurity of an empty or ragged sample"));
    }
    let total: f64 = columns.iter().map(|c| column_impurity(c, criterion)).sum();
    Ok(total / columns.len() as f64)
}

fn column_impurity(col: &[f64], criterion: Criterion) -> f64 {
    let n = col.len() as f64;
    match criterion {
        Criterion::Variance => {
            let mean = col.iter().sum::<f64>() / n;
            col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
        }
        Criterion::Gini | Criterion::Entropy => {
            let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
            for v in col {
                *counts.entry(v.to_bits()).or_default() += 1;
            }
            let probs = counts.values().map(|&c| c as f64 / n);
            if criterion == Criterion::Gini {
                1.0 - probs.map(|p| p * p).sum::<f64>()
            } else {
                -probs.map(|p| p * p.log2()).sum::<f64>()
            }
        }
    }
}

/// Running weighted sums for one node, one slot per output.
#[derive(Debug, Clone)]
pub(crate) struct Stats {
    pub weight: f64,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl Stats {
    pub fn new(outputs: usize) -> Self {
        Self {
            weight: 0.0,
            sum: vec![0.0; outputs],
            sum_sq: vec![0.0; outputs],
        }
    }

    #[inline]
    pub fn add(&mut self, w: f64, y: &[f64]) {
        self.weight += w;
        for ((s, s2), &v) in self.sum.iter_mut().zip(self.sum_sq.iter_mut()).zip(y) {
            *s += w * v;
            *s2 += w * v * v;
        }
    }

    pub fn minus(&self, other: &Stats) -> Stats {
        Stats {
            weight: self.weight - other.weight,
            sum: self
                .sum
                .iter()
                .zip(&other.sum)
                .map(|(a, b)| a - b)
                .collect(),
            sum_sq: self
                .sum_sq
                .iter()
                .zip(&other.sum_sq)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        self.sum.iter().map(|s| s / self.weight).collect()
    }

    /// Impurity for 0/1 targets (gini, entropy) or real targets (variance).
    pub fn impurity(&self, criterion: Criterion) -> f64 {
        let w = self.weight;
        if w <= 0.0 {
            return 0.0;
        }
        let total: f64 = self
            .sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(&s, &s2)| {
                let p = s / w;
                match criterion {
                    Criterion::Variance => (s2 / w - p * p).max(0.0),
                    Criterion::Gini => {
                        let p = p.clamp(0.0, 1.0);
                        2.0 * p * (1.0 - p)
                    }
                    Criterion::Entropy => {
                        let p = p.clamp(0.0, 1.0);
                        let h = |x: f64| if x > 0.0 { -x * x.log2() } else { 0.0 };
                        h(p) + h(1.0 - p)
                    }
                }
            })
            .sum();
        total / self.sum.len() as f64
    }
}
