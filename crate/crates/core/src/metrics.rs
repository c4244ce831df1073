//! Multi-label evaluation: pooled accuracy, macro AUC, precision/recall/F1,
//! mean average precision, one-vs-rest confusion counts and label
//! co-occurrence matrices.
//!
//! Scores and labels are `N × C` row collections. AUC and AP skip classes
//! whose labels make them undefined and report which ones they skipped.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Width shared by every row, or a shape error.
fn width<T>(rows: &[Vec<T>], op: &'static str) -> Result<usize> {
    let c = rows.first().ok_or(Error::Empty)?.len();
    if c == 0 {
        return Err(Error::Empty);
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != c) {
        return Err(Error::shape(op, &[c], &[bad.len()]));
    }
    Ok(c)
}

fn check_pair<A, B>(a: &[Vec<A>], b: &[Vec<B>], op: &'static str) -> Result<usize> {
    let ca = width(a, op)?;
    let cb = width(b, op)?;
    if a.len() != b.len() || ca != cb {
        return Err(Error::shape(op, &[a.len(), ca], &[b.len(), cb]));
    }
    Ok(ca)
}

/// `ŷ = 1` iff `p ≥ tau`.
pub fn threshold_predict(p: &[Vec<f64>], tau: f64) -> Vec<Vec<u8>> {
    p.iter()
        .map(|row| row.iter().map(|&v| u8::from(v >= tau)).collect())
        .collect()
}

/// One-vs-rest counts per class.
pub fn confusion_matrices(yhat: &[Vec<u8>], y: &[Vec<u8>]) -> Result<Vec<ConfusionCounts>> {
    let c = check_pair(yhat, y, "confusion_matrices")?;
    let mut counts = vec![ConfusionCounts::default(); c];
    for (ph, th) in yhat.iter().zip(y) {
        for (k, cc) in counts.iter_mut().enumerate() {
            match (ph[k] != 0, th[k] != 0) {
                (true, true) => cc.tp += 1,
                (true, false) => cc.fp += 1,
                (false, false) => cc.tn += 1,
                (false, true) => cc.fn_ += 1,
            }
        }
    }
    Ok(counts)
}

/// `(TP+TN)/(TP+FP+TN+FN)` pooled over all sample-label pairs.
pub fn accuracy_from_counts(counts: &[ConfusionCounts]) -> f64 {
    let correct: u64 = counts.iter().map(|c| c.tp + c.tn).sum();
    let total: u64 = counts.iter().map(ConfusionCounts::total).sum();
    ratio(correct, total)
}

pub fn multilabel_accuracy(yhat: &[Vec<u8>], y: &[Vec<u8>]) -> Result<f64> {
    Ok(accuracy_from_counts(&confusion_matrices(yhat, y)?))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, via midrank statistics. `None` when either class is
/// absent.
pub fn binary_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of 1-based midranks of the positives.
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] != 0 {
                pos_rank_sum += midrank;
            }
        }
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAverage {
    /// Unweighted mean over the classes that were not skipped.
    pub mean: f64,
    pub per_class: Vec<Option<f64>>,
    pub skipped: Vec<usize>,
}

fn column<T: Copy>(rows: &[Vec<T>], k: usize) -> Vec<T> {
    rows.iter().map(|r| r[k]).collect()
}

fn class_average(
    p: &[Vec<f64>],
    y: &[Vec<u8>],
    op: &'static str,
    per_class: impl Fn(&[f64], &[u8]) -> Option<f64>,
) -> Result<ClassAverage> {
    let c = check_pair(p, y, op)?;
    let values: Vec<Option<f64>> = (0..c).map(|k| per_class(&column(p, k), &column(y, k))).collect();
    let valid: Vec<f64> = values.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::NoValidClass);
    }
    Ok(ClassAverage {
        mean: valid.iter().sum::<f64>() / valid.len() as f64,
        skipped: values.iter().enumerate().filter(|(_, v)| v.is_none()).map(|(k, _)| k).collect(),
        per_class: values,
    })
}

/// Unweighted mean of per-class AUC over classes with both label values.
pub fn macro_auc(p: &[Vec<f64>], y: &[Vec<u8>]) -> Result<ClassAverage> {
    class_average(p, y, "macro_auc", binary_auc)
}

/// Mean of precision@k over the ranks of the positives, ranking by
/// descending score with ties broken by original index. `None` without
/// positives.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l != 0).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &idx) in order.iter().enumerate() {
        if labels[idx] != 0 {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(total / n_pos as f64)
}

pub fn mean_average_precision(p: &[Vec<f64>], y: &[Vec<u8>]) -> Result<ClassAverage> {
    class_average(p, y, "mean_average_precision", average_precision)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Macro-averaged precision, recall and F1; zero denominators give 0.
pub fn macro_prf1(yhat: &[Vec<u8>], y: &[Vec<u8>]) -> Result<Prf1> {
    Ok(prf1_from_counts(&confusion_matrices(yhat, y)?))
}

pub fn prf1_from_counts(counts: &[ConfusionCounts]) -> Prf1 {
    let n = counts.len().max(1) as f64;
    Prf1 {
        precision: counts.iter().map(ConfusionCounts::precision).sum::<f64>() / n,
        recall: counts.iter().map(ConfusionCounts::recall).sum::<f64>() / n,
        f1: counts.iter().map(ConfusionCounts::f1).sum::<f64>() / n,
    }
}

/// `M[j][k] = Σ_i a[i][j]·b[i][k]`.
pub fn cooccurrence(a: &[Vec<u8>], b: &[Vec<u8>]) -> Result<Vec<Vec<u64>>> {
    let c = check_pair(a, b, "cooccurrence")?;
    let mut m = vec![vec![0u64; c]; c];
    for (ra, rb) in a.iter().zip(b) {
        for (j, &aj) in ra.iter().enumerate() {
            if aj == 0 {
                continue;
            }
            for (k, &bk) in rb.iter().enumerate() {
                m[j][k] += u64::from(aj) * u64::from(bk);
            }
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_samples: usize,
    pub n_classes: usize,
    pub threshold: f64,
    pub accuracy: f64,
    pub macro_auc: f64,
    pub per_class_auc: Vec<Option<f64>>,
    pub auc_skipped: Vec<usize>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub map: f64,
    pub per_class_ap: Vec<Option<f64>>,
    pub map_skipped: Vec<usize>,
    pub confusion: Vec<ConfusionCounts>,
    /// True labels against true labels.
    pub cooc_true_true: Vec<Vec<u64>>,
    /// True labels (rows) against predicted labels (columns).
    pub cooc_true_pred: Vec<Vec<u64>>,
}

pub fn evaluate(p: &[Vec<f64>], y: &[Vec<u8>], tau: f64) -> Result<EvalReport> {
    let c = check_pair(p, y, "evaluate")?;
    let yhat = threshold_predict(p, tau);
    let confusion = confusion_matrices(&yhat, y)?;
    let prf = prf1_from_counts(&confusion);
    let auc = macro_auc(p, y)?;
    let ap = mean_average_precision(p, y)?;
    Ok(EvalReport {
        n_samples: p.len(),
        n_classes: c,
        threshold: tau,
        accuracy: accuracy_from_counts(&confusion),
        macro_auc: auc.mean,
        per_class_auc: auc.per_class,
        auc_skipped: auc.skipped,
        macro_precision: prf.precision,
        macro_recall: prf.recall,
        macro_f1: prf.f1,
        map: ap.mean,
        per_class_ap: ap.per_class,
        map_skipped: ap.skipped,
        cooc_true_true: cooccurrence(y, y)?,
        cooc_true_pred: cooccurrence(y, &yhat)?,
        confusion,
    })
}
