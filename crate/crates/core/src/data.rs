//! Dense containers shared by every stage of the pipeline.
//!
//! All containers are immutable once built and can be shared read-only across
//! worker threads.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

/// The five incident categories used by default, in label order.
pub const DEFAULT_LABELS: [&str; 5] = [
    "Privacy Violation",
    "Data Breach",
    "Extortion/Fraud",
    "IT Error",
    "Other",
];

/// Name of the catch-all category that unmapped incident types fall into.
pub const OTHER_LABEL: &str = "Other";

/// Row-major dense matrix of reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data has {} entries, expected {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::invalid(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::invalid("columns have unequal lengths"));
        }
        let cols = columns.len();
        let mut data = vec![0.0; rows * cols];
        for (j, c) in columns.iter().enumerate() {
            for (i, &v) in c.iter().enumerate() {
                data[i * cols + j] = v;
            }
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn select_cols(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for i in 0..self.rows {
            let r = self.row(i);
            data.extend(idx.iter().map(|&j| r[j]));
        }
        Matrix {
            rows: self.rows,
            cols: idx.len(),
            data,
        }
    }

    /// Returns a copy with `column` appended on the right.
    pub fn with_column(&self, column: &[f64]) -> Result<Matrix> {
        if column.len() != self.rows {
            return Err(Error::invalid(format!(
                "appended column has {} entries, expected {}",
                column.len(),
                self.rows
            )));
        }
        let cols = self.cols + 1;
        let mut data = Vec::with_capacity(self.rows * cols);
        for (i, &v) in column.iter().enumerate() {
            data.extend_from_slice(self.row(i));
            data.push(v);
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }
}

/// Ordered set of label (or output) names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::invalid("label set is empty"));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::invalid(format!("duplicate label name {n:?}")));
            }
        }
        Ok(Self { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl Default for LabelSet {
    fn default() -> Self {
        Self {
            names: DEFAULT_LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Firm-year row identity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RowKey {
    pub company_id: String,
    pub year: i32,
}

/// Entity-year feature matrix with column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    names: Vec<String>,
    values: Matrix,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, values: Matrix) -> Result<Self> {
        if names.len() != values.cols() {
            return Err(Error::invalid(format!(
                "{} column names for {} columns",
                names.len(),
                values.cols()
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::invalid(format!("duplicate feature name {n:?}")));
            }
        }
        if values.as_slice().iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("feature matrix contains NaN"));
        }
        Ok(Self { names, values })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            names: self.names.clone(),
            values: self.values.select_rows(idx),
        }
    }

    /// Projects onto the named columns, in the order given.
    pub fn project(&self, columns: &[String]) -> Result<FeatureMatrix> {
        let idx = columns
            .iter()
            .map(|c| {
                self.names
                    .iter()
                    .position(|n| n == c)
                    .ok_or_else(|| Error::Schema(format!("unknown feature column {c:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        FeatureMatrix::new(columns.to_vec(), self.values.select_cols(&idx))
    }
}

/// Binary occurrence matrix, one column per label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMatrix {
    labels: LabelSet,
    rows: usize,
    values: Vec<u8>,
}

impl LabelMatrix {
    pub fn new(labels: LabelSet, rows: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != rows * labels.len() {
            return Err(Error::invalid("label matrix size mismatch"));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::invalid("label matrix entries must be 0 or 1"));
        }
        Ok(Self {
            labels,
            rows,
            values,
        })
    }

    pub fn from_rows(labels: LabelSet, rows: &[Vec<u8>]) -> Result<Self> {
        let q = labels.len();
        let mut values = Vec::with_capacity(rows.len() * q);
        for r in rows {
            if r.len() != q {
                return Err(Error::invalid("label row length differs from label count"));
            }
            values.extend_from_slice(r);
        }
        Self::new(labels, rows.len(), values)
    }

    /// Convenience for tests and synthetic data: labels named `L1..Lq`.
    pub fn from_bits(rows: &[Vec<u8>]) -> Result<Self> {
        let q = rows.first().map_or(0, Vec::len);
        let labels = LabelSet::new((1..=q).map(|j| format!("L{j}")).collect())?;
        Self::from_rows(labels, rows)
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn q(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.values[i * self.q() + j]
    }

    pub fn row(&self, i: usize) -> &[u8] {
        let q = self.q();
        &self.values[i * q..(i + 1) * q]
    }

    pub fn column(&self, j: usize) -> Vec<u8> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> LabelMatrix {
        let mut values = Vec::with_capacity(idx.len() * self.q());
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        LabelMatrix {
            labels: self.labels.clone(),
            rows: idx.len(),
            values,
        }
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.q(),
            data: self.values.iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

/// Nonnegative incident counts, one column per output category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountMatrix {
    outputs: LabelSet,
    rows: usize,
    values: Vec<u32>,
}

impl CountMatrix {
    pub fn new(outputs: LabelSet, rows: usize, values: Vec<u32>) -> Result<Self> {
        if values.len() != rows * outputs.len() {
            return Err(Error::invalid("count matrix size mismatch"));
        }
        Ok(Self {
            outputs,
            rows,
            values,
        })
    }

    pub fn from_rows(outputs: LabelSet, rows: &[Vec<u32>]) -> Result<Self> {
        let q = outputs.len();
        let mut values = Vec::with_capacity(rows.len() * q);
        for r in rows {
            if r.len() != q {
                return Err(Error::invalid("count row length differs from output count"));
            }
            values.extend_from_slice(r);
        }
        Self::new(outputs, rows.len(), values)
    }

    pub fn outputs(&self) -> &LabelSet {
        &self.outputs
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn q(&self) -> usize {
        self.outputs.len()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.values[i * self.q() + j]
    }

    pub fn row(&self, i: usize) -> &[u32] {
        let q = self.q();
        &self.values[i * q..(i + 1) * q]
    }

    pub fn total(&self) -> u64 {
        self.values.iter().map(|&v| u64::from(v)).sum()
    }

    pub fn select_rows(&self, idx: &[usize]) -> CountMatrix {
        let mut values = Vec::with_capacity(idx.len() * self.q());
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        CountMatrix {
            outputs: self.outputs.clone(),
            rows: idx.len(),
            values,
        }
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.q(),
            data: self.values.iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

/// Occurrence indicators from counts: `y_ij = 1` iff `z_ij >= 1`.
pub fn derive_labels(counts: &CountMatrix) -> LabelMatrix {
    LabelMatrix {
        labels: counts.outputs.clone(),
        rows: counts.rows,
        values: counts.values.iter().map(|&z| u8::from(z >= 1)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndex {
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub seed: u64,
}

/// Random train/test partition of `m` rows.
///
/// The train side gets `round(ratio * m)` rows (half rounds up), clamped so that
/// both sides are nonempty. Index lists are returned sorted.
pub fn make_split(m: usize, ratio: f64, seed: u64) -> Result<SplitIndex> {
    if m < 2 {
        return Err(Error::invalid(format!("cannot split {m} rows")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio {ratio} not in (0, 1)")));
    }
    let r = ((ratio * m as f64) + 0.5).floor() as usize;
    let r = r.clamp(1, m - 1);
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(&mut rng_for(seed, &[0x5_u64]));
    let mut train_rows = perm[..r].to_vec();
    let mut test_rows = perm[r..].to_vec();
    train_rows.sort_unstable();
    test_rows.sort_unstable();
    Ok(SplitIndex {
        train_rows,
        test_rows,
        seed,
    })
}

/// K-fold assignment of a set of rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub rows: Vec<usize>,
    /// Fold of `rows[i]`.
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    /// `(training rows, validation rows)` for fold `f`, in the original order.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (&row, &a) in self.rows.iter().zip(&self.assignments) {
            if a == f {
                val.push(row);
            } else {
                train.push(row);
            }
        }
        (train, val)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Balanced K-fold plan: rows are shuffled, then dealt round-robin, so fold
/// sizes differ by at most one and the first `r mod K` folds get the extra row.
pub fn make_folds(train_rows: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::invalid(format!("fold count {k} < 2")));
    }
    if k > train_rows.len() {
        return Err(Error::invalid(format!(
            "fold count {k} exceeds {} training rows",
            train_rows.len()
        )));
    }
    let mut order: Vec<usize> = (0..train_rows.len()).collect();
    order.shuffle(&mut rng_for(seed, &[0xF_u64]));
    let mut assignments = vec![0; train_rows.len()];
    for (slot, &pos) in order.iter().enumerate() {
        assignments[pos] = slot % k;
    }
    Ok(FoldPlan {
        k,
        rows: train_rows.to_vec(),
        assignments,
        seed,
    })
}
