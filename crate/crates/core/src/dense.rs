//! Small dense-matrix helpers shared across modules.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

/// Copies `x` with every row scaled to unit L2 norm. Zero rows stay zero.
pub fn l2_normalize_rows(x: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
    out
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

pub fn argmax_rows(x: &ArrayView2<f64>) -> Vec<usize> {
    x.axis_iter(Axis(0)).map(|r| argmax(&r)).collect()
}

pub fn one_hot(labels: &[usize], num_classes: usize) -> Array2<f64> {
    let mut y = Array2::zeros((labels.len(), num_classes));
    for (i, &c) in labels.iter().enumerate() {
        y[[i, c]] = 1.0;
    }
    y
}

pub fn frobenius_sq(x: &ArrayView2<f64>) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn squared_distance(a: &ArrayView1<f64>, b: &ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
