//! External clustering quality against known labels.

use std::collections::HashMap;

fn contingency(pred: &[u32], truth: &[u32]) -> HashMap<(u32, u32), usize> {
    assert_eq!(pred.len(), truth.len(), "label vectors differ in length");
    let mut table = HashMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *table.entry((p, t)).or_insert(0) += 1;
    }
    table
}

/// Fraction of items whose cluster's majority true label matches their own.
pub fn purity(pred: &[u32], truth: &[u32]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let mut best: HashMap<u32, usize> = HashMap::new();
    for ((p, _), c) in contingency(pred, truth) {
        let b = best.entry(p).or_insert(0);
        *b = (*b).max(c);
    }
    best.values().sum::<usize>() as f64 / pred.len() as f64
}

/// Per-cluster purity: `cluster → (size, majority count)`.
pub fn cluster_purities(pred: &[u32], truth: &[u32]) -> HashMap<u32, (usize, usize)> {
    let mut out: HashMap<u32, (usize, usize)> = HashMap::new();
    for ((p, _), c) in contingency(pred, truth) {
        let e = out.entry(p).or_insert((0, 0));
        e.0 += c;
        e.1 = e.1.max(c);
    }
    out
}

fn choose2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Hubert–Arabie adjusted Rand index. Two single-cluster labelings score 1.
pub fn adjusted_rand_index(pred: &[u32], truth: &[u32]) -> f64 {
    let n = pred.len();
    let table = contingency(pred, truth);
    let mut rows: HashMap<u32, usize> = HashMap::new();
    let mut cols: HashMap<u32, usize> = HashMap::new();
    for (&(p, t), &c) in &table {
        *rows.entry(p).or_insert(0) += c;
        *cols.entry(t).or_insert(0) += c;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = a * b / choose2(n);
    let max = (a + b) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
