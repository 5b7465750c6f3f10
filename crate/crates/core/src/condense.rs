//! The synthetic triple (X′, A′, Y′) pooled through a sketching matrix.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::cluster::Sketch;
use crate::dense::{argmax_rows, one_hot};
use crate::error::{Error, Result};
use crate::graph::SparseGraph;

/// Provenance carried alongside a condensed graph.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CondensedMeta {
    pub source: String,
    pub ratio: f64,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CondensedGraph {
    pub x_prime: Array2<f64>,
    /// Dense, symmetric, nonnegative.
    pub a_prime: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub meta: CondensedMeta,
}

impl CondensedGraph {
    pub fn new(
        x_prime: Array2<f64>,
        a_prime: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        meta: CondensedMeta,
    ) -> Result<Self> {
        let n = x_prime.nrows();
        if a_prime.dim() != (n, n) {
            return Err(Error::shape(format!(
                "A′ is {:?} for {n} synthetic nodes",
                a_prime.dim()
            )));
        }
        if labels.len() != n {
            return Err(Error::shape(format!("{} labels for {n} synthetic nodes", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!("label {bad} outside 0..{num_classes}")));
        }
        for i in 0..n {
            for j in 0..n {
                let v = a_prime[[i, j]];
                if v < 0.0 || !v.is_finite() {
                    return Err(Error::invalid(format!("A′[{i},{j}] = {v}")));
                }
                if (v - a_prime[[j, i]]).abs() > 1e-12 {
                    return Err(Error::invalid(format!("A′ not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(CondensedGraph {
            x_prime,
            a_prime,
            labels,
            num_classes,
            meta,
        })
    }

    pub fn n(&self) -> usize {
        self.x_prime.nrows()
    }

    pub fn one_hot(&self) -> Array2<f64> {
        one_hot(&self.labels, self.num_classes)
    }
}

/// X′ = C̃ᵀZ.
pub fn condense_attributes(sketch: &Sketch, z: &ArrayView2<f64>) -> Result<Array2<f64>> {
    sketch.pool(z)
}

/// H′ = C̃ᵀH.
pub fn condensed_representations(sketch: &Sketch, h: &ArrayView2<f64>) -> Result<Array2<f64>> {
    sketch.pool(h)
}

/// A′ = C̃ᵀÃC̃, symmetrized so that accumulation order cannot leave
/// one-ulp asymmetries.
pub fn condense_adjacency(sketch: &Sketch, a_norm: &SparseGraph) -> Result<Array2<f64>> {
    let a = sketch.congruence(a_norm)?;
    Ok(symmetrize(&a))
}

pub(crate) fn symmetrize(a: &Array2<f64>) -> Array2<f64> {
    (a + &a.t()) * 0.5
}

/// Y′ = argmax over classes of C̃ᵀH, ties to the lowest class.
pub fn condense_labels(sketch: &Sketch, h: &ArrayView2<f64>) -> Result<Vec<usize>> {
    let pooled = sketch.pool(h)?;
    Ok(argmax_rows(&pooled.view()))
}

/// Zeroes entries below `epsilon · max(A′)`.
pub fn sparsify_condensed(a_prime: &ArrayView2<f64>, epsilon: f64) -> Array2<f64> {
    if epsilon <= 0.0 {
        return a_prime.to_owned();
    }
    let max = a_prime.iter().copied().fold(0.0, f64::max);
    let cut = epsilon * max;
    a_prime.mapv(|v| if v < cut { 0.0 } else { v })
}
