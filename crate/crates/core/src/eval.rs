//! Evaluation metrics: ROC sweeps, FPR at a fixed TPR, the median-loss
//! interruption criterion, rank correlation and ablation grids.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::{write_atomic, write_json};
use crate::error::{Error, Result};
use crate::stats::median;

/// TPR at which FPR is reported unless configured otherwise.
pub const DEFAULT_TPR_TARGET: f64 = 0.75;
/// Required relative drop of the median training loss.
pub const DEFAULT_LOSS_DECREASE: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Threshold sweep from `+inf` down to the smallest score. Positive means
/// memorized; larger scores predict positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub n_pos: usize,
    pub n_neg: usize,
}

pub fn roc_curve(scores: &[f64], truth: &[bool]) -> Result<RocCurve> {
    if scores.len() != truth.len() {
        return Err(Error::CountMismatch {
            left: scores.len(),
            right: truth.len(),
        });
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let n_pos = truth.iter().filter(|&&t| t).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument("ground truth has a single class".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let threshold = scores[order[k]];
        while k < order.len() && scores[order[k]] == threshold {
            if truth[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    Ok(RocCurve { points, n_pos, n_neg })
}

/// Smallest FPR among sweep points with `TPR >= tpr_target`; no interpolation.
pub fn fpr_at_tpr(curve: &RocCurve, tpr_target: f64) -> f64 {
    curve
        .points
        .iter()
        .filter(|p| p.tpr >= tpr_target)
        .map(|p| p.fpr)
        .fold(1.0, f64::min)
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// TPR and FPR of a fixed binary prediction.
pub fn operating_point(predicted: &[bool], truth: &[bool]) -> Result<(f64, f64)> {
    if predicted.len() != truth.len() {
        return Err(Error::CountMismatch {
            left: predicted.len(),
            right: truth.len(),
        });
    }
    let n_pos = truth.iter().filter(|&&t| t).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument("ground truth has a single class".into()));
    }
    let tp = predicted.iter().zip(truth).filter(|(&p, &t)| p && t).count();
    let fp = predicted.iter().zip(truth).filter(|(&p, &t)| p && !t).count();
    Ok((tp as f64 / n_pos as f64, fp as f64 / n_neg as f64))
}

/// Per-checkpoint training losses of the training members.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTrace {
    epochs: Vec<f64>,
    losses: Vec<Vec<f64>>,
}

impl LossTrace {
    pub fn new(epochs: Vec<f64>, losses: Vec<Vec<f64>>) -> Result<Self> {
        if epochs.is_empty() || epochs.len() != losses.len() {
            return Err(Error::CountMismatch {
                left: epochs.len(),
                right: losses.len(),
            });
        }
        if epochs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("checkpoint epochs must increase".into()));
        }
        for l in &losses {
            if l.is_empty() {
                return Err(Error::InvalidArgument("checkpoint without losses".into()));
            }
            if let Some(index) = l.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index });
            }
        }
        Ok(Self { epochs, losses })
    }

    pub fn epochs(&self) -> &[f64] {
        &self.epochs
    }

    pub fn medians(&self) -> Vec<f64> {
        self.losses.iter().map(|l| median(l)).collect()
    }
}

/// First checkpoint whose median loss is at most `(1 - fraction)` times the
/// median at the first checkpoint.
pub fn median_loss_criterion(trace: &LossTrace, fraction: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} outside [0, 1]")));
    }
    let medians = trace.medians();
    let baseline = medians[0];
    let level = (1.0 - fraction) * baseline;
    medians
        .iter()
        .position(|&m| m <= level)
        .ok_or(Error::CriterionNotReached {
            fraction,
            baseline,
            final_median: *medians.last().unwrap(),
        })
}

/// 1-based ranks, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman_r(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::CountMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 3 {
        return Err(Error::InvalidArgument("Spearman correlation needs n >= 3".into()));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Numerical("zero rank variance".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// One (checkpoint, layer, predictor) cell of an ablation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub checkpoint_epoch: f64,
    pub layer: usize,
    pub predictor: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub checkpoints: Vec<f64>,
    pub layers: Vec<usize>,
    pub predictors: Vec<String>,
}

impl AblationGrid {
    /// Cells ordered by checkpoint, layer, then predictor name.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut checkpoints = self.checkpoints.clone();
        checkpoints.sort_by(f64::total_cmp);
        let mut layers = self.layers.clone();
        layers.sort_unstable();
        let mut predictors = self.predictors.clone();
        predictors.sort();
        let mut out = Vec::new();
        for &c in &checkpoints {
            for &l in &layers {
                for p in &predictors {
                    out.push(CellKey {
                        checkpoint_epoch: c,
                        layer: l,
                        predictor: p.clone(),
                    });
                }
            }
        }
        out
    }
}

/// CSV row; the column order is part of the output format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub checkpoint_epoch: f64,
    pub layer: usize,
    pub predictor: String,
    pub tpr_target: f64,
    pub fpr: f64,
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingCell {
    pub cell: CellKey,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub missing: Vec<MissingCell>,
}

impl AblationReport {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut text = String::from_utf8(bytes).expect("csv output is utf-8");
        if self.rows.is_empty() {
            text.push_str("checkpoint_epoch,layer,predictor,tpr_target,fpr,auc,n_pos,n_neg\n");
        }
        Ok(text)
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        write_atomic(&dir.join(format!("{stem}.csv")), self.to_csv()?.as_bytes())?;
        write_json(dir.join(format!("{stem}.json")), self)
    }
}

/// Evaluates every cell of `grid`. Cells whose scores cannot be produced are
/// listed as missing; the remaining rows are still reported.
pub fn ablation_report<F>(grid: &AblationGrid, truth: &[bool], tpr_target: f64, cell_scores: F) -> AblationReport
where
    F: Fn(&CellKey) -> Result<Vec<f64>> + Sync,
{
    let results: Vec<(CellKey, Result<AblationRow>)> = grid
        .cells()
        .into_par_iter()
        .map(|cell| {
            let row = cell_scores(&cell).and_then(|scores| {
                let curve = roc_curve(&scores, truth)?;
                Ok(AblationRow {
                    checkpoint_epoch: cell.checkpoint_epoch,
                    layer: cell.layer,
                    predictor: cell.predictor.clone(),
                    tpr_target,
                    fpr: fpr_at_tpr(&curve, tpr_target),
                    auc: auc(&curve),
                    n_pos: curve.n_pos,
                    n_neg: curve.n_neg,
                })
            });
            (cell, row)
        })
        .collect();
    let mut report = AblationReport {
        rows: Vec::new(),
        missing: Vec::new(),
    };
    for (cell, row) in results {
        match row {
            Ok(r) => report.rows.push(r),
            Err(e) => report.missing.push(MissingCell {
                cell,
                reason: e.to_string(),
            }),
        }
    }
    report
}
