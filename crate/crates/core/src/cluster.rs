//! K-Means over node representations and the sketching matrices built from
//! the resulting partition.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dense::squared_distance;
use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::rng::{seeded, Rng};

/// A partition of N points into n nonempty clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    assignment: Vec<usize>,
    sizes: Vec<usize>,
    centroids: Array2<f64>,
}

impl Clustering {
    /// Builds a clustering from explicit ids; centroids are the cluster means of `points`.
    pub fn from_assignment(assignment: Vec<usize>, n: usize, points: &ArrayView2<f64>) -> Result<Self> {
        if assignment.len() != points.nrows() {
            return Err(Error::shape(format!(
                "{} assignments for {} points",
                assignment.len(),
                points.nrows()
            )));
        }
        let mut sizes = vec![0; n];
        for &a in &assignment {
            if a >= n {
                return Err(Error::invalid(format!("cluster id {a} out of range for n = {n}")));
            }
            sizes[a] += 1;
        }
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::invalid(format!("cluster {i} is empty")));
        }
        let centroids = means(points, &assignment, &sizes);
        Ok(Clustering {
            assignment,
            sizes,
            centroids,
        })
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn n(&self) -> usize {
        self.sizes.len()
    }

    pub fn num_points(&self) -> usize {
        self.assignment.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn centroids(&self) -> &Array2<f64> {
        &self.centroids
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&j| self.assignment[j] == cluster)
            .collect()
    }
}

fn means(points: &ArrayView2<f64>, assignment: &[usize], sizes: &[usize]) -> Array2<f64> {
    let mut c = Array2::zeros((sizes.len(), points.ncols()));
    for (row, &a) in points.axis_iter(Axis(0)).zip(assignment) {
        let mut target = c.row_mut(a);
        target += &row;
    }
    for (mut row, &s) in c.axis_iter_mut(Axis(0)).zip(sizes) {
        if s > 0 {
            row /= s as f64;
        }
    }
    c
}

/// Σ over clusters of squared distances to the cluster mean.
pub fn wcss(points: &ArrayView2<f64>, clustering: &Clustering) -> Result<f64> {
    if points.nrows() != clustering.num_points() {
        return Err(Error::shape(format!(
            "{} points for a clustering of {}",
            points.nrows(),
            clustering.num_points()
        )));
    }
    let mu = means(points, &clustering.assignment, &clustering.sizes);
    Ok(cost(points, &mu, &clustering.assignment))
}

fn cost(points: &ArrayView2<f64>, centers: &Array2<f64>, assignment: &[usize]) -> f64 {
    points
        .axis_iter(Axis(0))
        .zip(assignment)
        .map(|(p, &a)| squared_distance(&p, &centers.row(a)))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub max_iter: usize,
    /// Relative to the mean per-feature variance of the points.
    pub tol: f64,
    /// Independent k-means++ restarts; the lowest WCSS wins.
    pub n_init: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            max_iter: 300,
            tol: 1e-4,
            n_init: 1,
        }
    }
}

/// Result of a traced Lloyd run.
#[derive(Debug, Clone)]
pub struct KMeansTrace {
    pub clustering: Clustering,
    /// Cost against the seeded centers, then WCSS after every iteration.
    pub wcss_history: Vec<f64>,
    pub iterations: usize,
}

fn check_inputs(points: &ArrayView2<f64>, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("cluster count n must be positive"));
    }
    if n > points.nrows() {
        return Err(Error::invalid(format!(
            "cluster count {n} exceeds point count {}",
            points.nrows()
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("points contain non-finite values"));
    }
    Ok(())
}

fn nearest(p: &ArrayView1<f64>, centers: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centers.axis_iter(Axis(0)).enumerate() {
        let d = squared_distance(p, &row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding with D² sampling.
fn plus_plus(points: &ArrayView2<f64>, n: usize, rng: &mut Rng) -> Array2<f64> {
    let big_n = points.nrows();
    let mut centers = Array2::zeros((n, points.ncols()));
    let first = rng.random_range(0..big_n);
    centers.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = points
        .axis_iter(Axis(0))
        .map(|p| squared_distance(&p, &points.row(first)))
        .collect();
    for c in 1..n {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = big_n - 1;
            for (j, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = j;
                    break;
                }
                target -= w;
            }
            // guard against landing on a zero-weight tail through rounding
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..big_n)
        };
        centers.row_mut(c).assign(&points.row(pick));
        for (j, p) in points.axis_iter(Axis(0)).enumerate() {
            d2[j] = d2[j].min(squared_distance(&p, &points.row(pick)));
        }
    }
    centers
}

fn assign(points: &ArrayView2<f64>, centers: &Array2<f64>) -> (Vec<usize>, Vec<f64>) {
    points.axis_iter(Axis(0)).map(|p| nearest(&p, centers)).unzip()
}

/// Moves the point farthest from its center into each empty cluster.
/// Donors must keep at least one member.
fn repair_empty(
    points: &ArrayView2<f64>,
    centers: &mut Array2<f64>,
    assignment: &mut [usize],
    dist: &mut [f64],
    sizes: &mut [usize],
) {
    for c in 0..sizes.len() {
        if sizes[c] > 0 {
            continue;
        }
        let mut far: Option<usize> = None;
        for j in 0..assignment.len() {
            if sizes[assignment[j]] > 1 && far.is_none_or(|f| dist[j] > dist[f]) {
                far = Some(j);
            }
        }
        let j = far.expect("n ≤ N guarantees a donor");
        sizes[assignment[j]] -= 1;
        assignment[j] = c;
        sizes[c] = 1;
        dist[j] = 0.0;
        centers.row_mut(c).assign(&points.row(j));
    }
}

fn counts(assignment: &[usize], n: usize) -> Vec<usize> {
    let mut sizes = vec![0; n];
    for &a in assignment {
        sizes[a] += 1;
    }
    sizes
}

fn shift_threshold(points: &ArrayView2<f64>, tol: f64) -> f64 {
    let var = points.var_axis(Axis(0), 0.0);
    tol * var.mean().unwrap_or(0.0)
}

fn lloyd_once(points: &ArrayView2<f64>, n: usize, cfg: &KMeansConfig, rng: &mut Rng) -> KMeansTrace {
    let mut centers = plus_plus(points, n, rng);
    let threshold = shift_threshold(points, cfg.tol);
    let (mut assignment, mut dist) = assign(points, &centers);
    let mut history = vec![dist.iter().sum::<f64>()];
    let mut iterations = 0;
    loop {
        let mut sizes = counts(&assignment, n);
        repair_empty(points, &mut centers, &mut assignment, &mut dist, &mut sizes);
        let updated = means(points, &assignment, &sizes);
        let shift: f64 = (&updated - &centers).iter().map(|v| v * v).sum();
        centers = updated;
        iterations += 1;
        history.push(cost(points, &centers, &assignment));
        if shift <= threshold || iterations >= cfg.max_iter.max(1) {
            break;
        }
        (assignment, dist) = assign(points, &centers);
    }
    let sizes = counts(&assignment, n);
    KMeansTrace {
        clustering: Clustering {
            assignment,
            sizes,
            centroids: centers,
        },
        wcss_history: history,
        iterations,
    }
}

/// Lloyd's algorithm from k-means++ seeds, keeping the WCSS trajectory.
/// With `n_init > 1` the best restart is returned.
pub fn kmeans_traced(points: &ArrayView2<f64>, n: usize, seed: u64, cfg: &KMeansConfig) -> Result<KMeansTrace> {
    check_inputs(points, n)?;
    let mut rng = seeded(seed);
    let mut best: Option<(f64, KMeansTrace)> = None;
    for _ in 0..cfg.n_init.max(1) {
        let trace = lloyd_once(points, n, cfg, &mut rng);
        let w = *trace.wcss_history.last().expect("nonempty history");
        if best.as_ref().is_none_or(|(bw, _)| w < *bw) {
            best = Some((w, trace));
        }
    }
    Ok(best.expect("at least one run").1)
}

pub fn kmeans(points: &ArrayView2<f64>, n: usize, seed: u64, cfg: &KMeansConfig) -> Result<Clustering> {
    Ok(kmeans_traced(points, n, seed, cfg)?.clustering)
}

/// Mini-batch K-Means with per-center count-based learning rates. A batch
/// covering every point falls back to `kmeans`.
pub fn minibatch_kmeans(
    points: &ArrayView2<f64>,
    n: usize,
    seed: u64,
    cfg: &KMeansConfig,
    batch_size: usize,
) -> Result<Clustering> {
    check_inputs(points, n)?;
    if batch_size == 0 {
        return Err(Error::invalid("mini-batch size must be positive"));
    }
    let big_n = points.nrows();
    if batch_size >= big_n {
        return kmeans(points, n, seed, cfg);
    }
    let mut rng = seeded(seed);
    let threshold = shift_threshold(points, cfg.tol);
    let mut centers = plus_plus(points, n, &mut rng);
    let mut seen = vec![0usize; n];
    for _ in 0..cfg.max_iter.max(1) {
        let batch = rand::seq::index::sample(&mut rng, big_n, batch_size).into_vec();
        let old = centers.clone();
        let mut sums = Array2::<f64>::zeros(centers.dim());
        let mut hits = vec![0usize; n];
        for &j in &batch {
            let (c, _) = nearest(&points.row(j), &old);
            let mut s = sums.row_mut(c);
            s += &points.row(j);
            hits[c] += 1;
        }
        for c in 0..n {
            if hits[c] == 0 {
                continue;
            }
            let total = (seen[c] + hits[c]) as f64;
            let kept = seen[c] as f64 / total;
            let mut row = centers.row_mut(c);
            row *= kept;
            row.scaled_add(1.0 / total, &sums.row(c));
            seen[c] += hits[c];
        }
        let shift: f64 = (&centers - &old).iter().map(|v| v * v).sum();
        if shift <= threshold {
            break;
        }
    }
    let (mut assignment, mut dist) = assign(points, &centers);
    let mut sizes = counts(&assignment, n);
    repair_empty(points, &mut centers, &mut assignment, &mut dist, &mut sizes);
    Clustering::from_assignment(assignment, n, points)
}

/// Membership C and sketching matrix C̃ = C·diag(|C_i|)⁻¹ in implicit form.
#[derive(Debug, Clone, PartialEq)]
pub struct Sketch {
    assignment: Vec<usize>,
    sizes: Vec<usize>,
}

pub fn sketching_matrices(clustering: &Clustering) -> Sketch {
    Sketch {
        assignment: clustering.assignment.clone(),
        sizes: clustering.sizes.clone(),
    }
}

impl Sketch {
    pub fn num_points(&self) -> usize {
        self.assignment.len()
    }

    pub fn n(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Dense 0/1 membership matrix C (N×n).
    pub fn membership_dense(&self) -> Array2<f64> {
        let mut c = Array2::zeros((self.num_points(), self.n()));
        for (j, &a) in self.assignment.iter().enumerate() {
            c[[j, a]] = 1.0;
        }
        c
    }

    /// Dense C̃ (N×n), entries 1/|C_i|.
    pub fn sketch_dense(&self) -> Array2<f64> {
        let mut c = Array2::zeros((self.num_points(), self.n()));
        for (j, &a) in self.assignment.iter().enumerate() {
            c[[j, a]] = 1.0 / self.sizes[a] as f64;
        }
        c
    }

    /// C̃ᵀM: row i is the mean of M's rows in cluster i.
    pub fn pool(&self, m: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if m.nrows() != self.num_points() {
            return Err(Error::shape(format!(
                "matrix has {} rows, sketch covers {} points",
                m.nrows(),
                self.num_points()
            )));
        }
        Ok(means(m, &self.assignment, &self.sizes))
    }

    /// C̃ᵀ·v for a per-point vector.
    pub fn pool_vector(&self, v: &ArrayView1<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.n());
        for (j, &a) in self.assignment.iter().enumerate() {
            out[a] += v[j];
        }
        for (o, &s) in out.iter_mut().zip(&self.sizes) {
            *o /= s as f64;
        }
        out
    }

    /// C̃ applied to an n-row matrix: each point receives its cluster's row scaled by 1/|C_i|.
    pub fn scatter(&self, m: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.num_points(), m.ncols()));
        for (j, &a) in self.assignment.iter().enumerate() {
            let mut row = out.row_mut(j);
            row.scaled_add(1.0 / self.sizes[a] as f64, &m.row(a));
        }
        out
    }

    /// C̃ᵀ A C̃ as a dense n×n matrix, accumulated over the stored entries of A.
    pub fn congruence(&self, a: &SparseGraph) -> Result<Array2<f64>> {
        if a.num_nodes() != self.num_points() {
            return Err(Error::shape(format!(
                "graph has {} nodes, sketch covers {} points",
                a.num_nodes(),
                self.num_points()
            )));
        }
        let n = self.n();
        let mut out = Array2::zeros((n, n));
        for i in 0..a.num_nodes() {
            let ci = self.assignment[i];
            for (j, w) in a.row(i) {
                out[[ci, self.assignment[j]]] += w;
            }
        }
        for p in 0..n {
            for q in 0..n {
                out[[p, q]] /= (self.sizes[p] * self.sizes[q]) as f64;
            }
        }
        Ok(out)
    }
}
