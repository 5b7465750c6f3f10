//! Class-aware attribute refinement.
//!
//! Each class gets its own view of the graph: edges are scored by how
//! confidently both endpoints belong to the class, scaled by an approximate
//! effective resistance, and only the top fraction is kept. The kept graphs
//! are pooled to the condensed size, and an additive augmentation Δ on X′ is
//! trained jointly with a copy of the head so that every class view predicts
//! Y′ and the views agree with each other.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::cluster::Sketch;
use crate::condense::symmetrize;
use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::model::{
    clamp_log, cross_entropy, cross_entropy_logit_grad, softmax_backward, softmax_predict, ClassifierParams, Mode,
};
use crate::optim::{Optimizer, OptimizerKind};
use crate::propagate::{gls_propagate_dense, propagation_operator_dense, PropagationConfig};
use crate::rng::{seeded, Rng};

const COSINE_FLOOR: f64 = 1e-6;

/// What the retained edges of a class graph carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassGraphWeighting {
    /// Original normalized adjacency weight.
    #[default]
    Adjacency,
    /// The class edge score itself.
    EdgeWeight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub beta: f64,
    pub rho: f64,
    pub steps: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Applied to the head only, never to Δ.
    pub weight_decay: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub weighting: ClassGraphWeighting,
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::invalid(format!("rho = {} outside (0, 1]", self.rho)));
        }
        if self.gamma < 0.0 || self.lambda < 0.0 {
            return Err(Error::invalid("gamma and lambda must be nonnegative"));
        }
        if !self.beta.is_finite() {
            return Err(Error::invalid("beta must be finite"));
        }
        PropagationConfig::new(self.alpha, self.steps).map(|_| ())
    }

    fn propagation(&self) -> PropagationConfig {
        PropagationConfig {
            alpha: self.alpha,
            steps: self.steps,
        }
    }
}

fn cosine(a: &ndarray::ArrayView1<f64>, b: &ndarray::ArrayView1<f64>) -> f64 {
    let na = a.dot(a).sqrt();
    let nb = b.dot(b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return COSINE_FLOOR;
    }
    (a.dot(b) / (na * nb)).clamp(COSINE_FLOOR, 1.0)
}

/// d̃(v) = Σ over neighbours of the clamped cosine similarity of representations.
pub fn cosine_degrees(graph: &SparseGraph, h: &ArrayView2<f64>) -> Result<Array1<f64>> {
    if h.nrows() != graph.num_nodes() {
        return Err(Error::shape(format!(
            "H has {} rows for {} nodes",
            h.nrows(),
            graph.num_nodes()
        )));
    }
    Ok(Array1::from_shape_fn(graph.num_nodes(), |i| {
        graph
            .row(i)
            .filter(|&(j, _)| j != i)
            .map(|(j, _)| cosine(&h.row(i), &h.row(j)))
            .sum()
    }))
}

/// r(i, j) ≈ ½(1/d̃_i + 1/d̃_j), one value per edge in canonical order.
pub fn effective_resistance_approx(graph: &SparseGraph, d_tilde: &Array1<f64>) -> Vec<f64> {
    graph
        .edges()
        .map(|(i, j, _)| 0.5 * (1.0 / d_tilde[i] + 1.0 / d_tilde[j]))
        .collect()
}

/// w(i, j) = P_{i,y} · P_{j,y} · r(i, j).
pub fn class_edge_weights(graph: &SparseGraph, p: &ArrayView2<f64>, r: &[f64], y: usize) -> Vec<f64> {
    graph
        .edges()
        .zip(r)
        .map(|((i, j, _), &rij)| p[[i, y]] * p[[j, y]] * rij)
        .collect()
}

/// Per-class sparse graphs A°(y) and their pooled dense counterparts A′(y).
#[derive(Debug, Clone)]
pub struct ClassGraphSet {
    pub sampled: Vec<SparseGraph>,
    pub condensed: Vec<Array2<f64>>,
}

pub fn edge_quota(num_edges: usize, rho: f64) -> usize {
    ((rho * num_edges as f64).ceil() as usize).min(num_edges)
}

/// Keeps the ⌈ρM⌉ highest-scoring edges for every class. Ties favour the
/// lower canonical edge id.
pub fn sample_class_graphs(
    graph: &SparseGraph,
    p: &ArrayView2<f64>,
    r: &[f64],
    rho: f64,
    weighting: ClassGraphWeighting,
) -> Result<Vec<SparseGraph>> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::invalid(format!("rho = {rho} outside (0, 1]")));
    }
    if p.nrows() != graph.num_nodes() || r.len() != graph.num_edges() {
        return Err(Error::shape(format!(
            "P {:?} and {} resistances for a graph of {} nodes, {} edges",
            p.dim(),
            r.len(),
            graph.num_nodes(),
            graph.num_edges()
        )));
    }
    let edges: Vec<(usize, usize, f64)> = graph.edges().collect();
    let keep = edge_quota(edges.len(), rho);
    (0..p.ncols())
        .map(|y| {
            let w = class_edge_weights(graph, p, r, y);
            let mut order: Vec<usize> = (0..edges.len()).collect();
            order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
            let kept: Vec<(usize, usize, f64)> = order[..keep]
                .iter()
                .map(|&e| {
                    let (i, j, a) = edges[e];
                    let value = match weighting {
                        ClassGraphWeighting::Adjacency => a,
                        ClassGraphWeighting::EdgeWeight => w[e],
                    };
                    (i, j, value)
                })
                .collect();
            SparseGraph::from_weighted_edges(graph.num_nodes(), &kept)
        })
        .collect()
}

/// A′(y) = C̃ᵀA°(y)C̃ for each class.
pub fn condense_class_graphs(sketch: &Sketch, sampled: &[SparseGraph]) -> Result<Vec<Array2<f64>>> {
    sampled
        .iter()
        .map(|g| sketch.congruence(g).map(|a| symmetrize(&a)))
        .collect()
}

/// Builds the full class graph set from the frozen pretraining outputs.
pub fn build_class_graphs(
    a_norm: &SparseGraph,
    h: &ArrayView2<f64>,
    p: &ArrayView2<f64>,
    sketch: &Sketch,
    rho: f64,
    weighting: ClassGraphWeighting,
) -> Result<ClassGraphSet> {
    let d_tilde = cosine_degrees(a_norm, h)?;
    let r = effective_resistance_approx(a_norm, &d_tilde);
    let sampled = sample_class_graphs(a_norm, p, &r, rho, weighting)?;
    let condensed = condense_class_graphs(sketch, &sampled)?;
    Ok(ClassGraphSet { sampled, condensed })
}

/// H′(y) = W′(Σ_t (1−α)α^t A′(y)^t (X′ + βΔ)) in eval mode.
pub fn class_representations(
    condensed: &[Array2<f64>],
    x_prime: &ArrayView2<f64>,
    delta: &ArrayView2<f64>,
    beta: f64,
    params: &ClassifierParams,
    prop: PropagationConfig,
) -> Result<Vec<Array2<f64>>> {
    if x_prime.dim() != delta.dim() {
        return Err(Error::shape(format!("X′ {:?} vs Δ {:?}", x_prime.dim(), delta.dim())));
    }
    let input = x_prime + &(delta * beta);
    condensed
        .iter()
        .map(|a| {
            let s = gls_propagate_dense(&a.view(), &input.view(), prop)?;
            params.forward(&s.view(), Mode::Eval)
        })
        .collect()
}

/// −(1/n) Σ_i Σ_y log P′(y)_{i, y′_i}.
pub fn syn_loss(predictions: &[Array2<f64>], y_prime: &[usize]) -> Result<f64> {
    let n = y_prime.len();
    if n == 0 {
        return Err(Error::invalid("no synthetic nodes"));
    }
    let mut total = 0.0;
    for p in predictions {
        if p.nrows() != n {
            return Err(Error::shape(format!("view with {} rows for {n} labels", p.nrows())));
        }
        total -= y_prime
            .iter()
            .enumerate()
            .map(|(i, &y)| clamp_log(p[[i, y]]))
            .sum::<f64>();
    }
    Ok(total / n as f64)
}

/// (1/(nK)) Σ_i Σ_y ‖P(y)_i − P̄_i‖², with P̄ the mean over views.
pub fn consistency_loss(predictions: &[Array2<f64>]) -> Result<f64> {
    let k = predictions.len();
    if k == 0 {
        return Err(Error::invalid("no views"));
    }
    let dim = predictions[0].dim();
    if predictions.iter().any(|p| p.dim() != dim) {
        return Err(Error::shape("views differ in shape"));
    }
    let mean = view_mean(predictions);
    let total: f64 = predictions
        .iter()
        .map(|p| (p - &mean).iter().map(|v| v * v).sum::<f64>())
        .sum();
    Ok(total / (dim.0 * k) as f64)
}

fn view_mean(predictions: &[Array2<f64>]) -> Array2<f64> {
    let mut mean = Array2::zeros(predictions[0].dim());
    for p in predictions {
        mean += p;
    }
    mean / predictions.len() as f64
}

/// Loss components of one refinement step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub org: f64,
    pub syn: f64,
    pub cst: f64,
    pub total: f64,
}

/// Everything fixed during refinement: training rows of Z, the per-view
/// propagation operators, and the condensed labels.
#[derive(Debug, Clone)]
pub struct RefineProblem {
    z_train: Array2<f64>,
    train_labels: Vec<usize>,
    operators: Vec<Array2<f64>>,
    x_prime: Array2<f64>,
    y_prime: Vec<usize>,
    beta: f64,
    gamma: f64,
    lambda: f64,
}

impl RefineProblem {
    pub fn new(
        z: &ArrayView2<f64>,
        labels: &[usize],
        train: &[usize],
        class_graphs: &[Array2<f64>],
        x_prime: &ArrayView2<f64>,
        y_prime: &[usize],
        cfg: &RefineConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::invalid("refinement needs training nodes"));
        }
        if class_graphs.is_empty() {
            return Err(Error::invalid("refinement needs at least one class graph"));
        }
        if y_prime.len() != x_prime.nrows() || z.ncols() != x_prime.ncols() || labels.len() != z.nrows() {
            return Err(Error::shape(format!(
                "Z {:?}, X′ {:?}, {} labels, {} condensed labels",
                z.dim(),
                x_prime.dim(),
                labels.len(),
                y_prime.len()
            )));
        }
        let operators = class_graphs
            .iter()
            .map(|a| {
                if a.dim() != (x_prime.nrows(), x_prime.nrows()) {
                    return Err(Error::shape(format!("class graph {:?}", a.dim())));
                }
                propagation_operator_dense(&a.view(), cfg.propagation())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RefineProblem {
            z_train: z.select(Axis(0), train),
            train_labels: train.iter().map(|&i| labels[i]).collect(),
            operators,
            x_prime: x_prime.to_owned(),
            y_prime: y_prime.to_vec(),
            beta: cfg.beta,
            gamma: cfg.gamma,
            lambda: cfg.lambda,
        })
    }

    pub fn attributes(&self, delta: &ArrayView2<f64>) -> Array2<f64> {
        &self.x_prime + &(delta * self.beta)
    }

    /// Loss value and gradients with respect to the head and Δ.
    pub fn loss_and_grad(
        &self,
        params: &ClassifierParams,
        delta: &ArrayView2<f64>,
        mode: Mode<'_>,
    ) -> Result<(LossParts, ClassifierParams, Array2<f64>)> {
        let mut rng = match mode {
            Mode::Eval => None,
            Mode::Train(r) => Some(r),
        };

        // supervised loss on the original graph
        let rows: Vec<usize> = (0..self.z_train.nrows()).collect();
        let cache = params.forward_cached(&self.z_train.view(), reborrow(&mut rng))?;
        let p_org = softmax_predict(&cache.logits.view());
        let org = cross_entropy(&p_org.view(), &self.train_labels, &rows)?;
        let d_logits = cross_entropy_logit_grad(&p_org.view(), &self.train_labels, &rows);
        let (mut grad_params, _) = params.backward(&cache, &d_logits.view());

        // class views on the condensed graph
        let input = self.attributes(delta);
        let n = self.y_prime.len();
        let k = self.operators.len();
        let mut caches = Vec::with_capacity(k);
        let mut probs = Vec::with_capacity(k);
        for op in &self.operators {
            let s = op.dot(&input);
            let c = params.forward_cached(&s.view(), reborrow(&mut rng))?;
            probs.push(softmax_predict(&c.logits.view()));
            caches.push(c);
        }
        let syn = syn_loss(&probs, &self.y_prime)?;
        let cst = consistency_loss(&probs)?;
        let mean = view_mean(&probs);

        let all: Vec<usize> = (0..n).collect();
        let mut grad_delta = Array2::<f64>::zeros(self.x_prime.dim());
        for ((op, cache), p) in self.operators.iter().zip(&caches).zip(&probs) {
            // syn: n·CE averaged over n rows, so (P − Y′)/n per row
            let mut d_h = cross_entropy_logit_grad(&p.view(), &self.y_prime, &all) * self.gamma;
            if self.lambda != 0.0 {
                // the view-mean term vanishes because Σ_y (P(y) − P̄) = 0
                let d_p = (p - &mean) * (2.0 * self.lambda / (n * k) as f64);
                d_h += &softmax_backward(&p.view(), &d_p.view());
            }
            let (g, d_s) = params.backward(cache, &d_h.view());
            grad_params.add_assign(&g);
            grad_delta.scaled_add(self.beta, &op.t().dot(&d_s));
        }
        let total = org + self.gamma * syn + self.lambda * cst;
        Ok((LossParts { org, syn, cst, total }, grad_params, grad_delta))
    }
}

fn reborrow<'a>(rng: &'a mut Option<&mut Rng>) -> Mode<'a> {
    match rng {
        None => Mode::Eval,
        Some(r) => Mode::Train(r),
    }
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    /// X′ + βΔ.
    pub x_refined: Array2<f64>,
    pub delta: Array2<f64>,
    pub params: ClassifierParams,
    pub losses: Vec<LossParts>,
}

/// Jointly trains Δ (zero init) and the head W′ for `cfg.epochs` steps.
pub fn refine(problem: &RefineProblem, params_init: ClassifierParams, cfg: &RefineConfig) -> Result<RefineOutcome> {
    let mut rng = seeded(cfg.seed);
    let mut params = params_init;
    let mut delta = Array2::<f64>::zeros(problem.x_prime.dim());
    let mut head_opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.weight_decay);
    let mut delta_opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, 0.0);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (parts, g_params, g_delta) = problem.loss_and_grad(&params, &delta.view(), Mode::Train(&mut rng))?;
        if !parts.total.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        losses.push(parts);
        head_opt.step(&mut params.slices_mut(), &g_params.slices());
        delta_opt.step(
            &mut [delta.as_slice_mut().expect("standard layout")],
            &[g_delta.as_slice().expect("standard layout")],
        );
    }
    Ok(RefineOutcome {
        x_refined: problem.attributes(&delta.view()),
        delta,
        params,
        losses,
    })
}
