//! Planted-partition stochastic block model with Gaussian class features.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{homophily_ratio, Dataset, SparseGraph, Split};
use crate::rng::derived;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SbmSpec {
    pub num_nodes: usize,
    pub num_classes: usize,
    /// Edge probability inside a block.
    pub p: f64,
    /// Edge probability across blocks.
    pub q: f64,
    pub feature_dim: usize,
    /// Norm of each class mean.
    pub separation: f64,
    /// Standard deviation of the per-coordinate feature noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SbmSpec {
    fn default() -> Self {
        SbmSpec {
            num_nodes: 1000,
            num_classes: 4,
            p: 0.05,
            q: 0.005,
            feature_dim: 32,
            separation: 1.0,
            noise: 1.0,
            seed: 0,
        }
    }
}

impl SbmSpec {
    pub fn validate(&self) -> Result<()> {
        // q = p is admitted: it is the structureless reference case
        if !(0.0 <= self.q && self.q <= self.p && self.p <= 1.0) {
            return Err(Error::invalid(format!(
                "need 0 ≤ q ≤ p ≤ 1, got p = {}, q = {}",
                self.p, self.q
            )));
        }
        if self.num_classes == 0 || self.num_nodes < self.num_classes {
            return Err(Error::invalid("need at least one node per class"));
        }
        if self.feature_dim == 0 || self.noise < 0.0 {
            return Err(Error::invalid("feature_dim must be positive and noise nonnegative"));
        }
        Ok(())
    }
}

/// Generated graph together with its realized homophily.
#[derive(Debug, Clone)]
pub struct SbmGraph {
    pub dataset: Dataset,
    pub homophily: f64,
}

const LABEL_STREAM: u64 = 1;
const EDGE_STREAM: u64 = 2;
const FEATURE_STREAM: u64 = 3;
const SPLIT_STREAM: u64 = 4;

/// Balanced labels, Bernoulli edges per node pair, features drawn around a
/// random class mean, and a seeded 60/20/20 split.
pub fn generate_sbm(spec: &SbmSpec) -> Result<SbmGraph> {
    spec.validate()?;
    let n = spec.num_nodes;
    let k = spec.num_classes;

    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(&mut derived(spec.seed, LABEL_STREAM));

    let mut rng = derived(spec.seed, EDGE_STREAM);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let prob = if labels[i] == labels[j] { spec.p } else { spec.q };
            if rng.random::<f64>() < prob {
                edges.push((i, j));
            }
        }
    }
    let graph = SparseGraph::from_edges(n, &edges)?;

    let mut rng = derived(spec.seed, FEATURE_STREAM);
    let means: Vec<Array1<f64>> = (0..k)
        .map(|_| {
            let v: Array1<f64> = Array1::from_shape_simple_fn(spec.feature_dim, || StandardNormal.sample(&mut rng));
            let norm = v.dot(&v).sqrt().max(f64::MIN_POSITIVE);
            v * (spec.separation / norm)
        })
        .collect();
    let mut features = Array2::zeros((n, spec.feature_dim));
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        for (x, &m) in row.iter_mut().zip(means[labels[i]].iter()) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = m + spec.noise * z;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derived(spec.seed, SPLIT_STREAM));
    let train_end = n * 6 / 10;
    let val_end = n * 8 / 10;
    let mut split = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        split[i] = if rank < train_end {
            Split::Train
        } else if rank < val_end {
            Split::Val
        } else {
            Split::Test
        };
    }

    let homophily = if graph.num_edges() > 0 {
        homophily_ratio(&graph, &labels)?
    } else {
        f64::NAN
    };
    let name = format!("sbm-n{n}-k{k}-s{}", spec.seed);
    let dataset = Dataset::new(name, graph, features, labels, split, k)?;
    Ok(SbmGraph { dataset, homophily })
}
