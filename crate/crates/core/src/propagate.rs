//! Truncated graph-Laplacian smoothing, `Z = Σ_{t=0}^{T} (1−α) α^t Ã^t X`,
//! and an exact linear solve of `(I − αÃ) Z = (1−α) X` used as its oracle.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SparseGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub alpha: f64,
    pub steps: usize,
}

impl PropagationConfig {
    pub fn new(alpha: f64, steps: usize) -> Result<Self> {
        let cfg = PropagationConfig { alpha, steps };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!(
                "propagation alpha = {} must lie in [0, 1)",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Truncated power series over a sparse normalized adjacency. Terms are
/// accumulated in order t = 0, 1, …, T; `Ã^t` is never formed.
pub fn gls_propagate(a_norm: &SparseGraph, x: &ArrayView2<f64>, cfg: PropagationConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    if x.nrows() != a_norm.num_nodes() {
        return Err(Error::shape(format!(
            "X has {} rows for {} nodes",
            x.nrows(),
            a_norm.num_nodes()
        )));
    }
    let alpha = cfg.alpha;
    let mut term = x.to_owned();
    let mut z = term.mapv(|v| (1.0 - alpha) * v);
    let mut coeff = 1.0 - alpha;
    for _ in 0..cfg.steps {
        term = a_norm.spmm(&term.view())?;
        coeff *= alpha;
        z.scaled_add(coeff, &term);
    }
    Ok(z)
}

/// Same series over a small dense operator.
pub fn gls_propagate_dense(a: &ArrayView2<f64>, x: &ArrayView2<f64>, cfg: PropagationConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    if a.nrows() != a.ncols() || a.ncols() != x.nrows() {
        return Err(Error::shape(format!(
            "operator {:?} incompatible with X {:?}",
            a.dim(),
            x.dim()
        )));
    }
    let alpha = cfg.alpha;
    let mut term = x.to_owned();
    let mut z = term.mapv(|v| (1.0 - alpha) * v);
    let mut coeff = 1.0 - alpha;
    for _ in 0..cfg.steps {
        term = a.dot(&term);
        coeff *= alpha;
        z.scaled_add(coeff, &term);
    }
    Ok(z)
}

/// The dense n×n matrix `Σ_{t=0}^{T} (1−α) α^t A^t`.
pub fn propagation_operator_dense(a: &ArrayView2<f64>, cfg: PropagationConfig) -> Result<Array2<f64>> {
    let eye = Array2::<f64>::eye(a.nrows());
    gls_propagate_dense(a, &eye.view(), cfg)
}

const CG_TOLERANCE: f64 = 1e-10;

/// Solves `(I − αÃ) Z = (1−α) X` column by column with conjugate gradients.
/// `I − αÃ` is symmetric positive definite for α < 1 because the spectrum
/// of Ã lies in [−1, 1]. Converged when `‖R‖_F ≤ 1e−10 · max(1, ‖B‖_F)`.
pub fn gls_solve_exact(a_norm: &SparseGraph, x: &ArrayView2<f64>, alpha: f64) -> Result<Array2<f64>> {
    PropagationConfig::new(alpha, 0)?;
    let n = a_norm.num_nodes();
    if x.nrows() != n {
        return Err(Error::shape(format!("X has {} rows for {n} nodes", x.nrows())));
    }
    let apply = |v: &Array1<f64>| -> Array1<f64> {
        let mut out = v.clone();
        for i in 0..n {
            let mut acc = 0.0;
            for (j, w) in a_norm.row(i) {
                acc += w * v[j];
            }
            out[i] -= alpha * acc;
        }
        out
    };

    let b = x.mapv(|v| (1.0 - alpha) * v);
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let threshold = CG_TOLERANCE * b_norm.max(1.0);
    let max_iter = 10 * n.max(10);
    let mut z = Array2::<f64>::zeros(b.dim());
    let mut residuals = Array2::<f64>::zeros(b.dim());

    for (col, rhs) in b.axis_iter(Axis(1)).enumerate() {
        let mut sol = Array1::<f64>::zeros(n);
        let mut r = rhs.to_owned();
        let mut p = r.clone();
        let mut rs = r.dot(&r);
        let col_threshold = threshold / (b.ncols() as f64).sqrt();
        let mut it = 0;
        while rs.sqrt() > col_threshold && it < max_iter {
            let ap = apply(&p);
            let step = rs / p.dot(&ap);
            sol.scaled_add(step, &p);
            r.scaled_add(-step, &ap);
            let rs_new = r.dot(&r);
            p = &r + &(p * (rs_new / rs));
            rs = rs_new;
            it += 1;
        }
        z.column_mut(col).assign(&sol);
        // recompute the true residual rather than trusting the recurrence
        let true_r = &rhs - &apply(&sol);
        residuals.column_mut(col).assign(&true_r);
    }
    let residual = residuals.iter().map(|v| v * v).sum::<f64>().sqrt();
    if residual > threshold {
        return Err(Error::NotConverged {
            residual,
            iterations: max_iter,
        });
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::normalized_adjacency;
    use ndarray::array;

    fn single_edge() -> SparseGraph {
        normalized_adjacency(&SparseGraph::from_edges(2, &[(0, 1)]).unwrap())
    }

    #[test]
    fn zero_steps_scales_input() {
        let a = single_edge();
        let x = array![[2.0, -1.0], [4.0, 0.5]];
        let z = gls_propagate(&a, &x.view(), PropagationConfig::new(0.3, 0).unwrap()).unwrap();
        assert_eq!(z, x.mapv(|v| 0.7 * v));
    }

    #[test]
    fn alpha_zero_is_identity() {
        let a = single_edge();
        let x = array![[2.0, -1.0], [4.0, 0.5]];
        let z = gls_propagate(&a, &x.view(), PropagationConfig::new(0.0, 7).unwrap()).unwrap();
        assert_eq!(z, x);
    }

    #[test]
    fn single_edge_one_step() {
        let a = single_edge();
        let x = array![[1.0], [0.0]];
        let z = gls_propagate(&a, &x.view(), PropagationConfig::new(0.5, 1).unwrap()).unwrap();
        assert_eq!(z, array![[0.5], [0.25]]);
    }

    #[test]
    fn rejects_alpha_one_and_bad_shape() {
        assert!(PropagationConfig::new(1.0, 3).is_err());
        let a = single_edge();
        let x = array![[1.0], [0.0], [2.0]];
        assert!(gls_propagate(&a, &x.view(), PropagationConfig::new(0.5, 1).unwrap()).is_err());
    }

    #[test]
    fn exact_solve_edgeless_and_alpha_zero() {
        let g = normalized_adjacency(&SparseGraph::from_edges(3, &[]).unwrap());
        let x = array![[1.0, 2.0], [-3.0, 0.5], [0.0, 1.0]];
        let z = gls_solve_exact(&g, &x.view(), 0.6).unwrap();
        for (a, b) in z.iter().zip(x.iter()) {
            assert!((a - 0.4 * b).abs() < 1e-12);
        }
        let tri = normalized_adjacency(&SparseGraph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap());
        let z0 = gls_solve_exact(&tri, &x.view(), 0.0).unwrap();
        for (a, b) in z0.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_matches_sparse() {
        let g = normalized_adjacency(&SparseGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 3), (0, 2)]).unwrap());
        let x = array![[1.0, 0.0], [0.0, 1.0], [2.0, -1.0], [0.5, 0.5]];
        let cfg = PropagationConfig::new(0.8, 6).unwrap();
        let s = gls_propagate(&g, &x.view(), cfg).unwrap();
        let d = gls_propagate_dense(&g.to_dense().view(), &x.view(), cfg).unwrap();
        let op = propagation_operator_dense(&g.to_dense().view(), cfg).unwrap();
        let via_op = op.dot(&x);
        for ((a, b), c) in s.iter().zip(d.iter()).zip(via_op.iter()) {
            assert!((a - b).abs() < 1e-12);
            assert!((a - c).abs() < 1e-12);
        }
    }
}
