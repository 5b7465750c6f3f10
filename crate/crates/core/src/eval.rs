//! Two-layer graph convolutional evaluator and coreset baselines.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::condense::{CondensedGraph, CondensedMeta};
use crate::dense::squared_distance;
use crate::error::{Error, Result};
use crate::graph::{Dataset, SparseGraph, Split};
use crate::model::{accuracy, cross_entropy, cross_entropy_logit_grad, softmax_predict, Linear};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::{seeded, Rng};

/// Renormalized adjacency D̂^{-1/2}(A + I)D̂^{-1/2}, sparse or dense.
#[derive(Debug, Clone)]
pub enum Propagator {
    Sparse(SparseGraph),
    Dense(Array2<f64>),
}

impl Propagator {
    pub fn from_graph(graph: &SparseGraph) -> Self {
        let n = graph.num_nodes();
        let deg: Vec<f64> = (0..n)
            .map(|i| 1.0 + graph.row(i).filter(|&(j, _)| j != i).map(|(_, w)| w).sum::<f64>())
            .collect();
        let mut triples = Vec::with_capacity(graph.nnz() + n);
        for i in 0..n {
            triples.push((i, i, 1.0 / deg[i]));
            for (j, w) in graph.row(i).filter(|&(j, _)| j != i) {
                triples.push((i, j, w / (deg[i] * deg[j]).sqrt()));
            }
        }
        Propagator::Sparse(SparseGraph::from_triples(n, triples))
    }

    /// Dense variant for a weighted condensed adjacency. Any diagonal already
    /// present is kept and one unit self-loop is added on top.
    pub fn from_dense(a: &ArrayView2<f64>) -> Self {
        let n = a.nrows();
        let mut with_loops = a.to_owned();
        for i in 0..n {
            with_loops[[i, i]] += 1.0;
        }
        let scale: Vec<f64> = with_loops
            .sum_axis(Axis(1))
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
            .collect();
        let out = Array2::from_shape_fn((n, n), |(i, j)| scale[i] * with_loops[[i, j]] * scale[j]);
        Propagator::Dense(out)
    }

    pub fn num_nodes(&self) -> usize {
        match self {
            Propagator::Sparse(g) => g.num_nodes(),
            Propagator::Dense(a) => a.nrows(),
        }
    }

    /// Â·X. The operator is symmetric, so this also serves as Âᵀ·X.
    pub fn apply(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            Propagator::Sparse(g) => g.spmm(x),
            Propagator::Dense(a) => {
                if a.ncols() != x.nrows() {
                    return Err(Error::shape(format!("operator {:?} vs X {:?}", a.dim(), x.dim())));
                }
                Ok(a.dot(x))
            }
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match self {
            Propagator::Sparse(g) => g.to_dense(),
            Propagator::Dense(a) => a.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    pub first: Linear,
    pub second: Linear,
    pub dropout: f64,
}

impl GcnParams {
    pub fn init(input: usize, hidden: usize, classes: usize, dropout: f64, rng: &mut Rng) -> Self {
        GcnParams {
            first: Linear::init(input, hidden, rng),
            second: Linear::init(hidden, classes, rng),
            dropout,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.first.weight.ncols()
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.first.weight.as_slice_mut().expect("standard layout"),
            self.first.bias.as_slice_mut().expect("standard layout"),
            self.second.weight.as_slice_mut().expect("standard layout"),
            self.second.bias.as_slice_mut().expect("standard layout"),
        ]
    }

    fn slices(&self) -> Vec<&[f64]> {
        vec![
            self.first.weight.as_slice().expect("standard layout"),
            self.first.bias.as_slice().expect("standard layout"),
            self.second.weight.as_slice().expect("standard layout"),
            self.second.bias.as_slice().expect("standard layout"),
        ]
    }
}

struct GcnCache {
    ax: Array2<f64>,
    pre: Array2<f64>,
    mask: Option<Array2<f64>>,
    a_hidden: Array2<f64>,
    logits: Array2<f64>,
}

fn forward_cached(params: &GcnParams, op: &Propagator, ax: Array2<f64>, rng: Option<&mut Rng>) -> Result<GcnCache> {
    if ax.ncols() != params.first.weight.nrows() {
        return Err(Error::shape(format!(
            "features have {} columns, first layer expects {}",
            ax.ncols(),
            params.first.weight.nrows()
        )));
    }
    let pre = ax.dot(&params.first.weight) + &params.first.bias;
    let mut hidden = pre.mapv(|v| if v < 0.0 { 0.0 } else { v });
    let mask =
        match rng {
            Some(rng) if params.dropout > 0.0 => {
                use rand::Rng as _;
                let keep = 1.0 - params.dropout;
                let m = Array2::from_shape_simple_fn(hidden.dim(), || {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                hidden *= &m;
                Some(m)
            }
            _ => None,
        };
    let a_hidden = op.apply(&hidden.view())?;
    let logits = a_hidden.dot(&params.second.weight) + &params.second.bias;
    Ok(GcnCache {
        ax,
        pre,
        mask,
        a_hidden,
        logits,
    })
}

/// layer2(Â · relu(layer1(Â · X))), with dropout on the hidden layer in train mode.
pub fn gcn_forward(
    params: &GcnParams,
    op: &Propagator,
    x: &ArrayView2<f64>,
    rng: Option<&mut Rng>,
) -> Result<Array2<f64>> {
    let ax = op.apply(x)?;
    Ok(forward_cached(params, op, ax, rng)?.logits)
}

fn backward(params: &GcnParams, op: &Propagator, cache: &GcnCache, d_logits: &Array2<f64>) -> Result<GcnParams> {
    let d_w2 = cache.a_hidden.t().dot(d_logits);
    let d_b2 = d_logits.sum_axis(Axis(0));
    let d_a_hidden = d_logits.dot(&params.second.weight.t());
    let mut d_hidden = op.apply(&d_a_hidden.view())?;
    if let Some(m) = &cache.mask {
        d_hidden *= m;
    }
    ndarray::Zip::from(&mut d_hidden).and(&cache.pre).for_each(|d, &p| {
        if p <= 0.0 {
            *d = 0.0;
        }
    });
    Ok(GcnParams {
        first: Linear {
            weight: cache.ax.t().dot(&d_hidden),
            bias: d_hidden.sum_axis(Axis(0)),
        },
        second: Linear {
            weight: d_w2,
            bias: d_b2,
        },
        dropout: params.dropout,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSelection {
    #[default]
    Final,
    BestValidation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub hidden: usize,
    /// Number of evaluator seeds averaged in a report.
    pub runs: usize,
    pub selection: ModelSelection,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            epochs: 600,
            learning_rate: 0.01,
            weight_decay: 1e-5,
            dropout: 0.5,
            hidden: 256,
            runs: 5,
            selection: ModelSelection::Final,
        }
    }
}

/// Trained evaluator plus its loss trajectory.
#[derive(Debug, Clone)]
pub struct GcnFit {
    pub params: GcnParams,
    pub losses: Vec<f64>,
}

/// Optional validation hook used for best-validation model selection.
pub struct Validation<'a> {
    pub op: &'a Propagator,
    pub features: ArrayView2<'a, f64>,
    pub labels: &'a [usize],
    pub nodes: &'a [usize],
}

/// Full-batch training with masked cross-entropy.
#[allow(clippy::too_many_arguments)]
pub fn train_gcn(
    op: &Propagator,
    x: &ArrayView2<f64>,
    labels: &[usize],
    mask: &[usize],
    num_classes: usize,
    cfg: &EvalConfig,
    seed: u64,
    validation: Option<&Validation<'_>>,
) -> Result<GcnFit> {
    if mask.is_empty() {
        return Err(Error::invalid("evaluator training mask is empty"));
    }
    let mut rng = seeded(seed);
    let mut params = GcnParams::init(x.ncols(), cfg.hidden, num_classes, cfg.dropout, &mut rng);
    let mut opt = Optimizer::new(OptimizerKind::Adam, cfg.learning_rate, cfg.weight_decay);
    let ax = op.apply(x)?;
    let val_ax = match validation {
        Some(v) if cfg.selection == ModelSelection::BestValidation => Some(v.op.apply(&v.features)?),
        _ => None,
    };
    let mut best: Option<(f64, GcnParams)> = None;
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let cache = forward_cached(&params, op, ax.clone(), Some(&mut rng))?;
        let p = softmax_predict(&cache.logits.view());
        let loss = cross_entropy(&p.view(), labels, mask)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        losses.push(loss);
        let d_logits = cross_entropy_logit_grad(&p.view(), labels, mask);
        let grads = backward(&params, op, &cache, &d_logits)?;
        opt.step(&mut params.slices_mut(), &grads.slices());
        if let (Some(v), Some(vax)) = (validation, &val_ax) {
            let logits = forward_cached(&params, v.op, vax.clone(), None)?.logits;
            let acc = accuracy(&logits.view(), v.labels, v.nodes);
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, params.clone()));
            }
        }
    }
    if let Some((_, p)) = best {
        params = p;
    }
    Ok(GcnFit { params, losses })
}

/// Trains the evaluator on (A′ renormalized, X′, Y′).
pub fn train_eval_gcn(condensed: &CondensedGraph, cfg: &EvalConfig, seed: u64) -> Result<GcnFit> {
    let op = Propagator::from_dense(&condensed.a_prime.view());
    let all: Vec<usize> = (0..condensed.n()).collect();
    train_gcn(
        &op,
        &condensed.x_prime.view(),
        &condensed.labels,
        &all,
        condensed.num_classes,
        cfg,
        seed,
        None,
    )
}

/// Reference run: the evaluator trained on the original training nodes.
pub fn train_full_gcn(dataset: &Dataset, cfg: &EvalConfig, seed: u64) -> Result<GcnFit> {
    let op = Propagator::from_graph(&dataset.graph);
    train_gcn(
        &op,
        &dataset.features.view(),
        &dataset.labels,
        &dataset.train_indices(),
        dataset.num_classes,
        cfg,
        seed,
        None,
    )
}

/// Test accuracy of `params` on the original graph with raw attributes.
pub fn evaluate_on_original(params: &GcnParams, dataset: &Dataset) -> Result<f64> {
    let op = Propagator::from_graph(&dataset.graph);
    evaluate_with(params, &op, dataset)
}

pub fn evaluate_with(params: &GcnParams, op: &Propagator, dataset: &Dataset) -> Result<f64> {
    let logits = gcn_forward(params, op, &dataset.features.view(), None)?;
    Ok(accuracy(&logits.view(), &dataset.labels, &dataset.test_indices()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub fid: Option<f64>,
    pub runtime_seconds: f64,
}

impl EvalReport {
    pub fn from_accuracies(accuracies: Vec<f64>, runtime_seconds: f64) -> Self {
        let k = accuracies.len().max(1) as f64;
        let mean = accuracies.iter().sum::<f64>() / k;
        let var = accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / k;
        EvalReport {
            accuracies,
            mean,
            std: var.sqrt(),
            fid: None,
            runtime_seconds,
        }
    }
}

/// Trains one evaluator per seed on the condensed graph and tests each on
/// the original graph. Seeds are `base_seed, base_seed + 1, …`. Returns the
/// trained parameters alongside the report.
pub fn evaluate_condensed(
    condensed: &CondensedGraph,
    dataset: &Dataset,
    cfg: &EvalConfig,
    base_seed: u64,
) -> Result<(EvalReport, Vec<GcnParams>)> {
    let start = Instant::now();
    let op = Propagator::from_graph(&dataset.graph);
    let cond_op = Propagator::from_dense(&condensed.a_prime.view());
    let all: Vec<usize> = (0..condensed.n()).collect();
    let val_nodes = dataset.indices(Split::Val);
    let validation = Validation {
        op: &op,
        features: dataset.features.view(),
        labels: &dataset.labels,
        nodes: &val_nodes,
    };
    let mut accs = Vec::with_capacity(cfg.runs);
    let mut fits = Vec::with_capacity(cfg.runs);
    for r in 0..cfg.runs.max(1) {
        let fit = train_gcn(
            &cond_op,
            &condensed.x_prime.view(),
            &condensed.labels,
            &all,
            condensed.num_classes,
            cfg,
            base_seed.wrapping_add(r as u64),
            Some(&validation),
        )?;
        accs.push(evaluate_with(&fit.params, &op, dataset)?);
        fits.push(fit.params);
    }
    Ok((EvalReport::from_accuracies(accs, start.elapsed().as_secs_f64()), fits))
}

/// Mean and population std of full-training-set evaluator accuracy.
pub fn evaluate_full(dataset: &Dataset, cfg: &EvalConfig, base_seed: u64) -> Result<EvalReport> {
    let start = Instant::now();
    let op = Propagator::from_graph(&dataset.graph);
    let train = dataset.train_indices();
    let mut accs = Vec::with_capacity(cfg.runs);
    for r in 0..cfg.runs.max(1) {
        let fit = train_gcn(
            &op,
            &dataset.features.view(),
            &dataset.labels,
            &train,
            dataset.num_classes,
            cfg,
            base_seed.wrapping_add(r as u64),
            None,
        )?;
        accs.push(evaluate_with(&fit.params, &op, dataset)?);
    }
    Ok(EvalReport::from_accuracies(accs, start.elapsed().as_secs_f64()))
}

/// Per-class budgets proportional to class frequency among `pool`, at least
/// one per present class, leftovers to the largest classes.
pub fn class_quotas(labels: &[usize], pool: &[usize], num_classes: usize, n: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; num_classes];
    for &i in pool {
        counts[labels[i]] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count();
    if n < present {
        return Err(Error::invalid(format!(
            "budget {n} below the {present} represented classes"
        )));
    }
    if n > pool.len() {
        return Err(Error::invalid(format!(
            "budget {n} exceeds the {} candidates",
            pool.len()
        )));
    }
    let total = pool.len() as f64;
    let mut quota: Vec<usize> = counts
        .iter()
        .map(|&c| {
            if c == 0 {
                0
            } else {
                ((n as f64 * c as f64 / total).floor() as usize).max(1)
            }
        })
        .collect();
    let mut by_size: Vec<usize> = (0..num_classes).collect();
    by_size.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut assigned: usize = quota.iter().sum();
    while assigned > n {
        let c = *by_size.iter().find(|&&c| quota[c] > 1).expect("n ≥ present classes");
        quota[c] -= 1;
        assigned -= 1;
    }
    while assigned < n {
        let before = assigned;
        for &c in &by_size {
            if assigned < n && quota[c] < counts[c] {
                quota[c] += 1;
                assigned += 1;
            }
        }
        if assigned == before {
            break;
        }
    }
    for c in 0..num_classes {
        if quota[c] > counts[c] {
            return Err(Error::QuotaExceeded {
                class: c,
                quota: quota[c],
                available: counts[c],
            });
        }
    }
    Ok(quota)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoresetMethod {
    Random,
    KCenter,
    Herding,
}

fn class_members(dataset: &Dataset, pool: &[usize], class: usize) -> Vec<usize> {
    pool.iter().copied().filter(|&i| dataset.labels[i] == class).collect()
}

fn class_mean(z: &ArrayView2<f64>, members: &[usize]) -> Array1<f64> {
    z.select(Axis(0), members).mean_axis(Axis(0)).expect("nonempty class")
}

fn kcenter(z: &ArrayView2<f64>, members: &[usize], k: usize) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    let mean = class_mean(z, members);
    let mut dist: Vec<f64> = members
        .iter()
        .map(|&i| squared_distance(&z.row(i), &mean.view()))
        .collect();
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let mut far = 0;
        for m in 1..members.len() {
            if dist[m] > dist[far] {
                far = m;
            }
        }
        let pick = members[far];
        chosen.push(pick);
        for (m, &i) in members.iter().enumerate() {
            dist[m] = dist[m].min(squared_distance(&z.row(i), &z.row(pick)));
        }
        dist[far] = f64::NEG_INFINITY;
    }
    chosen
}

fn herding(z: &ArrayView2<f64>, members: &[usize], k: usize) -> Vec<usize> {
    let mean = class_mean(z, members);
    let mut sum = Array1::<f64>::zeros(z.ncols());
    let mut taken = vec![false; members.len()];
    let mut chosen = Vec::with_capacity(k);
    for step in 1..=k {
        let mut best: Option<(f64, usize)> = None;
        for (m, &i) in members.iter().enumerate() {
            if taken[m] {
                continue;
            }
            let running = (&sum + &z.row(i)) / step as f64;
            let d = squared_distance(&running.view(), &mean.view());
            if best.is_none_or(|(b, _)| d < b) {
                best = Some((d, m));
            }
        }
        let (_, m) = best.expect("quota within class size");
        taken[m] = true;
        sum += &z.row(members[m]);
        chosen.push(members[m]);
    }
    chosen
}

/// Selects `n` real training nodes and returns them as a condensed graph:
/// X′ = selected rows of Z, A′ = induced subgraph, Y′ = true labels.
pub fn coreset(
    dataset: &Dataset,
    z: &ArrayView2<f64>,
    n: usize,
    seed: u64,
    method: CoresetMethod,
) -> Result<CondensedGraph> {
    if z.nrows() != dataset.num_nodes() {
        return Err(Error::shape(format!(
            "Z has {} rows for {} nodes",
            z.nrows(),
            dataset.num_nodes()
        )));
    }
    let pool = dataset.train_indices();
    let quotas = class_quotas(&dataset.labels, &pool, dataset.num_classes, n)?;
    let mut rng = seeded(seed);
    let mut selected = Vec::with_capacity(n);
    for (class, &q) in quotas.iter().enumerate() {
        let mut members = class_members(dataset, &pool, class);
        if q == 0 {
            continue;
        }
        let picks = match method {
            CoresetMethod::Random => {
                members.shuffle(&mut rng);
                members.truncate(q);
                members
            }
            CoresetMethod::KCenter => kcenter(z, &members, q),
            CoresetMethod::Herding => herding(z, &members, q),
        };
        selected.extend(picks);
    }
    selected.sort_unstable();
    let x_prime = z.select(Axis(0), &selected);
    let a_prime = dataset.graph.induced_subgraph(&selected).to_dense();
    let labels = selected.iter().map(|&i| dataset.labels[i]).collect();
    CondensedGraph::new(
        x_prime,
        a_prime,
        labels,
        dataset.num_classes,
        CondensedMeta {
            source: dataset.name.clone(),
            ratio: n as f64 / dataset.num_nodes() as f64,
            seed,
            config_hash: String::new(),
        },
    )
}

pub fn coreset_random(dataset: &Dataset, z: &ArrayView2<f64>, n: usize, seed: u64) -> Result<CondensedGraph> {
    coreset(dataset, z, n, seed, CoresetMethod::Random)
}

pub fn coreset_kcenter(dataset: &Dataset, z: &ArrayView2<f64>, n: usize, seed: u64) -> Result<CondensedGraph> {
    coreset(dataset, z, n, seed, CoresetMethod::KCenter)
}

pub fn coreset_herding(dataset: &Dataset, z: &ArrayView2<f64>, n: usize, seed: u64) -> Result<CondensedGraph> {
    coreset(dataset, z, n, seed, CoresetMethod::Herding)
}
