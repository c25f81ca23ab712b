//! Classification metrics: confusion matrix, one-vs-rest precision / recall /
//! F1 with macro averaging, and top-k accuracy.
//!
//! Macro averages run over all `K` classes. A class whose precision (or
//! recall) is undefined because its denominator is zero contributes 0 to that
//! average.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

/// `K×K` counts, rows are true classes and columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        (0..self.classes).map(|j| self.get(k, j)).sum()
    }

    pub fn col_sum(&self, k: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, k)).sum()
    }

    pub fn tp(&self, k: usize) -> u64 {
        self.get(k, k)
    }

    pub fn fp(&self, k: usize) -> u64 {
        self.col_sum(k) - self.tp(k)
    }

    pub fn fn_(&self, k: usize) -> u64 {
        self.row_sum(k) - self.tp(k)
    }

    pub fn tn(&self, k: usize) -> u64 {
        self.total() - self.tp(k) - self.fp(k) - self.fn_(k)
    }
}

pub fn confusion_matrix(preds: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut counts = vec![0u64; classes * classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= classes || l >= classes {
            return Err(Error::Data(format!(
                "class index out of range for {classes} classes: prediction {p}, label {l}"
            )));
        }
        counts[l * classes + p] += 1;
    }
    Ok(ConfusionMatrix { classes, counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    /// `None` when `tp + fp == 0`.
    pub precision: Option<f64>,
    /// `None` when `tp + fn == 0`.
    pub recall: Option<f64>,
    /// `None` unless precision and recall are defined and not both zero.
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn class_stats(cm: &ConfusionMatrix, k: usize) -> ClassStats {
    let (tp, fp, fn_) = (cm.tp(k), cm.fp(k), cm.fn_(k));
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    ClassStats {
        tp,
        fp,
        fn_,
        tn: cm.tn(k),
        precision,
        recall,
        f1,
    }
}

/// Per-class statistics and their macro averages.
pub fn precision_recall_f1(cm: &ConfusionMatrix) -> (Vec<ClassStats>, MacroScores) {
    let per: Vec<ClassStats> = (0..cm.classes).map(|k| class_stats(cm, k)).collect();
    let k = cm.classes.max(1) as f64;
    let mean = |f: fn(&ClassStats) -> Option<f64>| per.iter().map(|c| f(c).unwrap_or(0.0)).sum::<f64>() / k;
    let scores = MacroScores {
        precision: mean(|c| c.precision),
        recall: mean(|c| c.recall),
        f1: mean(|c| c.f1),
    };
    (per, scores)
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Whether `label` ranks among the `k` largest entries of `row`, ties going
/// to the lower class index.
pub fn in_top_k<T: Scalar>(row: &[T], label: usize, k: usize) -> bool {
    let y = row[label];
    let ahead = row
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > y || (v == y && j < label))
        .count();
    ahead < k
}

/// Fraction of rows of `logits` (`B×K`, row-major) whose label is in the top
/// `k`.
pub fn topk_accuracy<T: Scalar>(logits: &[T], classes: usize, labels: &[usize], k: usize) -> Result<f64> {
    if k == 0 || k > classes {
        return Err(Error::Contract(format!("top-{k} undefined for {classes} classes")));
    }
    if logits.len() != labels.len() * classes {
        return Err(Error::Data(format!(
            "{} logits for {} labels of {classes} classes",
            logits.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Data("top-k accuracy of an empty set".into()));
    }
    let mut hits = 0usize;
    for (row, &label) in logits.chunks(classes).zip(labels) {
        if label >= classes {
            return Err(Error::Data(format!("label {label} out of range for {classes} classes")));
        }
        if in_top_k(row, label, k) {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

/// Evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub samples: usize,
    pub top1: f64,
    /// Top-`min(5, K)` accuracy.
    pub top5: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassStats>,
    pub confusion: ConfusionMatrix,
}

impl RunMetrics {
    pub fn from_logits<T: Scalar>(logits: &[T], classes: usize, labels: &[usize]) -> Result<Self> {
        let top1 = topk_accuracy(logits, classes, labels, 1)?;
        let top5 = topk_accuracy(logits, classes, labels, classes.min(5))?;
        let preds: Vec<usize> = logits.chunks(classes).map(argmax).collect();
        let cm = confusion_matrix(&preds, labels, classes)?;
        let (per_class, m) = precision_recall_f1(&cm);
        Ok(RunMetrics {
            samples: labels.len(),
            top1,
            top5,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            per_class,
            confusion: cm,
        })
    }

    /// `class,tp,fp,fn,precision,recall,f1`, undefined values left empty.
    pub fn per_class_csv(&self, names: &[String]) -> String {
        let mut out = String::from("class,tp,fp,fn,precision,recall,f1\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for (k, c) in self.per_class.iter().enumerate() {
            let name = names.get(k).cloned().unwrap_or_else(|| format!("{k}"));
            let _ = writeln!(
                out,
                "{name},{},{},{},{},{},{}",
                c.tp,
                c.fp,
                c.fn_,
                opt(c.precision),
                opt(c.recall),
                opt(c.f1)
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_class_enumeration() {
        let cm = confusion_matrix(&[0, 1, 1], &[0, 0, 1], 2).unwrap();
        assert_eq!((cm.tp(0), cm.fn_(0), cm.fp(0)), (1, 1, 0));
        assert_eq!((cm.tp(1), cm.fp(1)), (1, 1));
    }

    #[test]
    fn formula_arithmetic() {
        // class 0: tp 3, fp 1, fn 1
        let preds = [0, 0, 0, 0, 1];
        let labels = [0, 0, 0, 1, 0];
        let cm = confusion_matrix(&preds, &labels, 2).unwrap();
        let s = class_stats(&cm, 0);
        assert_eq!(s.precision, Some(0.75));
        assert_eq!(s.recall, Some(0.75));
        assert_eq!(s.f1, Some(0.75));
    }

    #[test]
    fn tie_break_prefers_lower_index() {
        let row = [1.0f64, 1.0, 1.0];
        assert!(in_top_k(&row, 0, 1));
        assert!(!in_top_k(&row, 1, 1));
        assert!(in_top_k(&row, 1, 2));
        assert_eq!(argmax(&row), 0);
    }

    #[test]
    fn k_above_class_count_is_contract_error() {
        assert!(matches!(
            topk_accuracy(&[0.1f64, 0.9], 2, &[1], 3),
            Err(Error::Contract(_))
        ));
        assert_eq!(topk_accuracy(&[0.1f64, 0.9], 2, &[1], 1).unwrap(), 1.0);
    }

    #[test]
    fn out_of_range_is_data_error() {
        assert!(matches!(confusion_matrix(&[2], &[0], 2), Err(Error::Data(_))));
    }
}
