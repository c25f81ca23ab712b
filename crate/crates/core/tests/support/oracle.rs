//! Brute-force metric definitions used to cross-check the library.

#![allow(dead_code)]

pub struct Scores {
    pub confusion: Vec<Vec<u64>>,
    pub precision: Vec<Option<f64>>,
    pub recall: Vec<Option<f64>>,
    pub f1: Vec<Option<f64>>,
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
}

/// Counts each `(truth, pred)` cell by scanning every sample.
pub fn scores(preds: &[usize], labels: &[usize], k: usize) -> Scores {
    let mut confusion = vec![vec![0u64; k]; k];
    for (t, row) in confusion.iter_mut().enumerate() {
        for (p, cell) in row.iter_mut().enumerate() {
            *cell = preds
                .iter()
                .zip(labels)
                .filter(|&(&pi, &li)| li == t && pi == p)
                .count() as u64;
        }
    }
    let (mut precision, mut recall, mut f1) = (Vec::new(), Vec::new(), Vec::new());
    for c in 0..k {
        let tp = preds.iter().zip(labels).filter(|&(&p, &l)| p == c && l == c).count() as u64;
        let fp = preds.iter().zip(labels).filter(|&(&p, &l)| p == c && l != c).count() as u64;
        let fn_ = preds.iter().zip(labels).filter(|&(&p, &l)| p != c && l == c).count() as u64;
        let p = if tp + fp == 0 {
            None
        } else {
            Some(tp as f64 / (tp + fp) as f64)
        };
        let r = if tp + fn_ == 0 {
            None
        } else {
            Some(tp as f64 / (tp + fn_) as f64)
        };
        let f = match (p, r) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        precision.push(p);
        recall.push(r);
        f1.push(f);
    }
    let mean = |v: &[Option<f64>]| v.iter().map(|x| x.unwrap_or(0.0)).sum::<f64>() / k as f64;
    Scores {
        macro_p: mean(&precision),
        macro_r: mean(&recall),
        macro_f1: mean(&f1),
        confusion,
        precision,
        recall,
        f1,
    }
}

/// Top-k by fully ranking each row: descending score, ascending index.
pub fn topk(logits: &[f64], k_classes: usize, labels: &[usize], k: usize) -> f64 {
    let mut hits = 0;
    for (row, &label) in logits.chunks(k_classes).zip(labels) {
        let mut order: Vec<usize> = (0..k_classes).collect();
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
        if order[..k].contains(&label) {
            hits += 1;
        }
    }
    hits as f64 / labels.len() as f64
}
