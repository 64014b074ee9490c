//! Multi-label classification and multi-output regression metrics.

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{LabelMatrix, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    WeightedF1,
    MacroF1,
    MicroF1,
    SampleF1,
    Jaccard,
    Hamming,
    Amse,
    Armse,
    Acc,
    Arrmse,
    EuDist,
}

impl Metric {
    pub const CLASSIFICATION: [Metric; 6] = [
        Metric::WeightedF1,
        Metric::MacroF1,
        Metric::MicroF1,
        Metric::SampleF1,
        Metric::Jaccard,
        Metric::Hamming,
    ];
    pub const REGRESSION: [Metric; 5] = [
        Metric::Amse,
        Metric::Armse,
        Metric::Acc,
        Metric::Arrmse,
        Metric::EuDist,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::WeightedF1 => "weighted_f1",
            Metric::MacroF1 => "macro_f1",
            Metric::MicroF1 => "micro_f1",
            Metric::SampleF1 => "sample_f1",
            Metric::Jaccard => "jaccard",
            Metric::Hamming => "hamming",
            Metric::Amse => "amse",
            Metric::Armse => "armse",
            Metric::Acc => "acc",
            Metric::Arrmse => "arrmse",
            Metric::EuDist => "eu_dist",
        }
    }

    /// True when smaller values are better.
    pub fn is_loss(self) -> bool {
        matches!(
            self,
            Metric::Hamming | Metric::Amse | Metric::Armse | Metric::Arrmse | Metric::EuDist
        )
    }

    pub fn is_classification(self) -> bool {
        Metric::CLASSIFICATION.contains(&self)
    }

    /// Maps a metric value to a loss to minimise: losses pass through,
    /// scores bounded above by 1 become `1 - value`.
    pub fn as_loss(self, value: f64) -> f64 {
        if self.is_loss() {
            value
        } else {
            1.0 - value
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Metric> {
        Metric::CLASSIFICATION
            .iter()
            .chain(Metric::REGRESSION.iter())
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown metric `{s}`")))
    }
}

/// Confusion counts over one slice (a label, a row, or everything).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCells {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCells {
    fn add(&mut self, truth: u8, pred: u8) {
        match (truth != 0, pred != 0) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn support(&self) -> u64 {
        self.tp + self.fn_
    }

    /// `2TP / (2TP + FP + FN)`, zero when the denominator is zero.
    pub fn f1(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / den as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub weighted_f1: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub sample_f1: f64,
    pub jaccard: f64,
    pub hamming: f64,
}

impl ClassificationReport {
    pub fn get(&self, m: Metric) -> Option<f64> {
        Some(match m {
            Metric::WeightedF1 => self.weighted_f1,
            Metric::MacroF1 => self.macro_f1,
            Metric::MicroF1 => self.micro_f1,
            Metric::SampleF1 => self.sample_f1,
            Metric::Jaccard => self.jaccard,
            Metric::Hamming => self.hamming,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub amse: f64,
    pub armse: f64,
    pub acc: f64,
    pub arrmse: f64,
    pub eu_dist: f64,
}

impl RegressionReport {
    pub fn get(&self, m: Metric) -> Option<f64> {
        Some(match m {
            Metric::Amse => self.amse,
            Metric::Armse => self.armse,
            Metric::Acc => self.acc,
            Metric::Arrmse => self.arrmse,
            Metric::EuDist => self.eu_dist,
            _ => return None,
        })
    }
}

/// Zero-denominator handling for the per-label averages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationOptions {
    /// Drop labels with no support and no predicted positives from Macro-F1
    /// instead of counting them as 0.
    pub macro_exclude_empty: bool,
}

/// Per-label confusion cells for row-major `q`-wide bit vectors.
pub fn label_cells(q: usize, y: &[u8], yhat: &[u8]) -> Vec<ConfusionCells> {
    let mut cells = vec![ConfusionCells::default(); q];
    for (k, (&t, &p)) in y.iter().zip(yhat).enumerate() {
        cells[k % q].add(t, p);
    }
    cells
}

fn check_bits(q: usize, y: &[u8], yhat: &[u8]) -> Result<()> {
    if q == 0 || y.len() != yhat.len() || !y.len().is_multiple_of(q) || y.is_empty() {
        return Err(Error::invalid(format!(
            "label matrices must share a nonempty shape (q = {q}, {} vs {} cells)",
            y.len(),
            yhat.len()
        )));
    }
    if y.iter().chain(yhat).any(|&b| b > 1) {
        return Err(Error::invalid("label matrices must be binary"));
    }
    Ok(())
}

pub fn classification_report(y: &LabelMatrix, yhat: &LabelMatrix) -> Result<ClassificationReport> {
    classification_report_with(y, yhat, ClassificationOptions::default())
}

pub fn classification_report_with(
    y: &LabelMatrix,
    yhat: &LabelMatrix,
    opts: ClassificationOptions,
) -> Result<ClassificationReport> {
    if y.rows() != yhat.rows() || y.q() != yhat.q() {
        return Err(Error::invalid(format!(
            "shape mismatch: {}x{} vs {}x{}",
            y.rows(),
            y.q(),
            yhat.rows(),
            yhat.q()
        )));
    }
    let q = y.q();
    let flat = |l: &LabelMatrix| {
        (0..l.rows())
            .flat_map(|i| l.row(i).to_vec())
            .collect::<Vec<u8>>()
    };
    classification_report_bits(q, &flat(y), &flat(yhat), opts)
}

/// The six classification metrics on row-major bit vectors of width `q`.
pub fn classification_report_bits(
    q: usize,
    y: &[u8],
    yhat: &[u8],
    opts: ClassificationOptions,
) -> Result<ClassificationReport> {
    check_bits(q, y, yhat)?;
    let m = y.len() / q;
    let cells = label_cells(q, y, yhat);

    let total_support: u64 = cells.iter().map(ConfusionCells::support).sum();
    let weighted_f1 = if total_support == 0 {
        0.0
    } else {
        cells
            .iter()
            .map(|c| c.support() as f64 * c.f1())
            .sum::<f64>()
            / total_support as f64
    };

    let macro_terms: Vec<f64> = cells
        .iter()
        .filter(|c| !(opts.macro_exclude_empty && c.support() == 0 && c.fp == 0))
        .map(ConfusionCells::f1)
        .collect();
    let macro_f1 = if macro_terms.is_empty() {
        0.0
    } else {
        macro_terms.iter().sum::<f64>() / macro_terms.len() as f64
    };

    let mut global = ConfusionCells::default();
    for c in &cells {
        global.tp += c.tp;
        global.fp += c.fp;
        global.fn_ += c.fn_;
        global.tn += c.tn;
    }
    let micro_f1 = global.f1();

    let mut sample_sum = 0.0;
    let mut jaccard_sum = 0.0;
    for (ty, py) in y.chunks(q).zip(yhat.chunks(q)) {
        let mut c = ConfusionCells::default();
        for (&t, &p) in ty.iter().zip(py) {
            c.add(t, p);
        }
        let union = c.tp + c.fp + c.fn_;
        if union == 0 {
            sample_sum += 1.0;
            jaccard_sum += 1.0;
        } else {
            sample_sum += c.f1();
            jaccard_sum += c.tp as f64 / union as f64;
        }
    }

    let hamming = (global.fp + global.fn_) as f64 / (m * q) as f64;
    Ok(ClassificationReport {
        weighted_f1,
        macro_f1,
        micro_f1,
        sample_f1: sample_sum / m as f64,
        jaccard: jaccard_sum / m as f64,
        hamming,
    })
}

/// Pearson correlation; 0 when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa.sqrt() * sbb.sqrt())
}

/// Per-output mean squared errors.
pub fn output_mse(z: &Matrix, zhat: &Matrix) -> Result<Vec<f64>> {
    check_regression_shapes(z, zhat)?;
    let (m, q) = (z.rows(), z.cols());
    let mut sse = vec![0.0; q];
    for i in 0..m {
        for (j, (a, b)) in z.row(i).iter().zip(zhat.row(i)).enumerate() {
            sse[j] += (a - b) * (a - b);
        }
    }
    Ok(sse.into_iter().map(|s| s / m as f64).collect())
}

fn check_regression_shapes(z: &Matrix, zhat: &Matrix) -> Result<()> {
    if z.rows() != zhat.rows() || z.cols() != zhat.cols() || z.rows() == 0 || z.cols() == 0 {
        return Err(Error::invalid(format!(
            "shape mismatch or empty: {}x{} vs {}x{}",
            z.rows(),
            z.cols(),
            zhat.rows(),
            zhat.cols()
        )));
    }
    Ok(())
}

/// The five regression metrics. Outputs with zero true variance are
/// excluded from aRRMSE; if every output is excluded aRRMSE is NaN.
pub fn regression_report(z: &Matrix, zhat: &Matrix) -> Result<RegressionReport> {
    let mse = output_mse(z, zhat)?;
    let (m, q) = (z.rows(), z.cols());
    let amse = mse.iter().sum::<f64>() / q as f64;
    let armse = mse.iter().map(|v| v.sqrt()).sum::<f64>() / q as f64;

    let mut acc_sum = 0.0;
    let mut rr_sum = 0.0;
    let mut rr_n = 0usize;
    for (j, mse_j) in mse.iter().enumerate() {
        let t = z.column(j);
        let p = zhat.column(j);
        let mean = t.iter().sum::<f64>() / m as f64;
        let ss_tot: f64 = t.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sse = mse_j * m as f64;
        if ss_tot == 0.0 {
            warn!("output {j} has zero true variance; excluded from aRRMSE, correlation set to 0");
        } else {
            rr_sum += (sse / ss_tot).sqrt();
            rr_n += 1;
        }
        let r = pearson(&t, &p);
        if ss_tot != 0.0 && r == 0.0 && p.iter().all(|v| *v == p[0]) {
            warn!("output {j} predictions are constant; correlation set to 0");
        }
        acc_sum += r;
    }
    let arrmse = if rr_n == 0 {
        f64::NAN
    } else {
        rr_sum / rr_n as f64
    };

    let eu_dist = (0..m)
        .map(|i| {
            z.row(i)
                .iter()
                .zip(zhat.row(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / m as f64;

    Ok(RegressionReport {
        amse,
        armse,
        acc: acc_sum / q as f64,
        arrmse,
        eu_dist,
    })
}

/// Column-wise min-max normalisation for heatmap colouring. `is_loss[c]`
/// flips column `c` so that 1 is always best. Constant columns map to 0.5;
/// non-finite cells stay NaN.
pub fn normalize_for_heatmap(table: &[Vec<f64>], is_loss: &[bool]) -> Result<Vec<Vec<f64>>> {
    let cols = is_loss.len();
    if table.iter().any(|r| r.len() != cols) {
        return Err(Error::invalid(
            "heatmap rows must match the orientation map width",
        ));
    }
    let mut out = vec![vec![f64::NAN; cols]; table.len()];
    for c in 0..cols {
        let finite: Vec<f64> = table
            .iter()
            .map(|r| r[c])
            .filter(|v| v.is_finite())
            .collect();
        if finite.is_empty() {
            return Err(Error::invalid(format!(
                "heatmap column {c} has no finite value"
            )));
        }
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            warn!("heatmap column {c} is constant; mapped to 0.5");
        }
        for (r, row) in table.iter().enumerate() {
            let v = row[c];
            if !v.is_finite() {
                continue;
            }
            out[r][c] = if lo == hi {
                0.5
            } else {
                let s = (v - lo) / (hi - lo);
                if is_loss[c] {
                    1.0 - s
                } else {
                    s
                }
            };
        }
    }
    Ok(out)
}
