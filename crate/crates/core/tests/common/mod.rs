//! Independent dense oracles and random instance generators shared by the
//! integration tests.

#![allow(dead_code)]

use graphdistill::cluster::Clustering;
use graphdistill::graph::SparseGraph;
use graphdistill::model::ClassifierParams;
use graphdistill::rng::{seeded, Rng};
use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> Rng {
    seeded(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// Erdős–Rényi edge list on `n` nodes.
pub fn random_edges(n: usize, p: f64, rng: &mut Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Random graph with at least one edge.
pub fn random_graph(n: usize, p: f64, rng: &mut Rng) -> SparseGraph {
    let mut edges = random_edges(n, p, rng);
    if edges.is_empty() {
        edges.push((0, 1));
    }
    SparseGraph::from_edges(n, &edges).unwrap()
}

/// Random graph containing the path 0–1–…–(n−1), so no node is isolated.
pub fn connected_graph(n: usize, p: f64, rng: &mut Rng) -> SparseGraph {
    let mut edges = random_edges(n, p, rng);
    for i in 1..n {
        if !edges.contains(&(i - 1, i)) {
            edges.push((i - 1, i));
        }
    }
    SparseGraph::from_edges(n, &edges).unwrap()
}

pub fn random_labels(n: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

/// Labels using every class at least once.
pub fn covering_labels(n: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
    labels.shuffle(rng);
    labels
}

/// Random partition of `points` into `n` nonempty clusters.
pub fn random_clustering(points: &ArrayView2<f64>, n: usize, rng: &mut Rng) -> Clustering {
    let assignment = covering_labels(points.nrows(), n, rng);
    Clustering::from_assignment(assignment, n, points).unwrap()
}

pub fn normalize_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
    out
}

/// D^{-1/2} A D^{-1/2} from a dense adjacency.
pub fn dense_normalized(a: &Array2<f64>) -> Array2<f64> {
    let d: Vec<f64> = a.rows().into_iter().map(|r| r.sum()).collect();
    Array2::from_shape_fn(a.dim(), |(i, j)| {
        if d[i] > 0.0 && d[j] > 0.0 {
            a[[i, j]] / (d[i] * d[j]).sqrt()
        } else {
            0.0
        }
    })
}

/// Dense membership matrix scaled by inverse cluster sizes.
pub fn dense_sketch(clustering: &Clustering) -> Array2<f64> {
    let mut c = Array2::zeros((clustering.num_points(), clustering.n()));
    for (j, &i) in clustering.assignment().iter().enumerate() {
        c[[j, i]] = 1.0 / clustering.sizes()[i] as f64;
    }
    c
}

pub fn frob(x: &Array2<f64>) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(m: &Array2<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[[i, i]]).collect()
}

/// Square root of a symmetric positive definite matrix by Denman–Beavers
/// iteration.
pub fn sqrt_spd(m: &Array2<f64>) -> Array2<f64> {
    let n = m.nrows();
    let mut y = m.clone();
    let mut z = Array2::<f64>::eye(n);
    for _ in 0..100 {
        let y_inv = invert(&y);
        let z_inv = invert(&z);
        let y_next = (&y + &z_inv) * 0.5;
        let z_next = (&z + &y_inv) * 0.5;
        let done = max_abs_diff(&y_next, &y) < 1e-15;
        y = y_next;
        z = z_next;
        if done {
            break;
        }
    }
    y
}

/// Gauss–Jordan inverse with partial pivoting.
pub fn invert(m: &Array2<f64>) -> Array2<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    let mut inv = Array2::<f64>::eye(n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))
            .unwrap();
        for k in 0..n {
            a.swap([col, k], [pivot, k]);
            inv.swap([col, k], [pivot, k]);
        }
        let d = a[[col, col]];
        for k in 0..n {
            a[[col, k]] /= d;
            inv[[col, k]] /= d;
        }
        for i in 0..n {
            if i != col {
                let f = a[[i, col]];
                if f != 0.0 {
                    for k in 0..n {
                        a[[i, k]] -= f * a[[col, k]];
                        inv[[i, k]] -= f * inv[[col, k]];
                    }
                }
            }
        }
    }
    inv
}

/// Random symmetric positive definite matrix `GGᵀ/k + εI`.
pub fn random_spd(dim: usize, rng: &mut Rng) -> Array2<f64> {
    let g = gaussian(dim, dim + 2, rng);
    g.dot(&g.t()) / (dim + 2) as f64 + Array2::<f64>::eye(dim) * 0.05
}

/// Spectral radius of a symmetric matrix by power iteration on A².
pub fn spectral_radius(a: &Array2<f64>, rng: &mut Rng) -> f64 {
    let n = a.nrows();
    let mut v: Array1<f64> = Array1::from_shape_simple_fn(n, || StandardNormal.sample(rng));
    let mut estimate = 0.0;
    for _ in 0..2000 {
        let w = a.dot(&a.dot(&v));
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = (norm / v.dot(&v).sqrt()).sqrt();
        v = w / norm;
        if (next - estimate).abs() < 1e-12 {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// Relative error in the norm sense: ‖a − b‖ / max(‖a‖ + ‖b‖, floor).
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nb).max(1e-8)
}

/// Central differences of `loss` over every head parameter, one tensor at a time.
pub fn head_fd_gradient(
    params: &ClassifierParams,
    step: f64,
    loss: impl Fn(&ClassifierParams) -> f64,
) -> Vec<Vec<f64>> {
    let shapes: Vec<usize> = params.slices().iter().map(|s| s.len()).collect();
    shapes
        .iter()
        .enumerate()
        .map(|(t, &len)| {
            (0..len)
                .map(|e| {
                    let mut plus = params.clone();
                    plus.slices_mut()[t][e] += step;
                    let mut minus = params.clone();
                    minus.slices_mut()[t][e] -= step;
                    (loss(&plus) - loss(&minus)) / (2.0 * step)
                })
                .collect()
        })
        .collect()
}

/// Central differences of `loss` over every entry of a matrix.
pub fn matrix_fd_gradient(x: &Array2<f64>, step: f64, loss: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    Array2::from_shape_fn(x.dim(), |idx| {
        let mut plus = x.clone();
        plus[idx] += step;
        let mut minus = x.clone();
        minus[idx] -= step;
        (loss(&plus) - loss(&minus)) / (2.0 * step)
    })
}
