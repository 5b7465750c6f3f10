//! End-to-end distillation: propagate, pretrain the head, cluster, pool,
//! refine attributes, then evaluate.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::RngCore;

use crate::caar::{build_class_graphs, refine, RefineProblem};
use crate::cluster::{kmeans, minibatch_kmeans, sketching_matrices, wcss, Clustering, Sketch};
use crate::condense::{
    condense_adjacency, condense_attributes, condense_labels, condensed_representations, sparsify_condensed,
    CondensedGraph, CondensedMeta,
};
use crate::config::{PipelineConfig, Protocol, RatioBase};
use crate::dense::l2_normalize_rows;
use crate::error::{Error, Result, StageContext};
use crate::eval::{evaluate_condensed, gcn_forward, EvalReport, GcnParams, Propagator};
use crate::fid::{covariance_term, fid, gaussian_stats, mean_shift_sq, theorem1_bound, theorem2_bound};
use crate::graph::{icad, normalized_adjacency, Dataset};
use crate::model::{softmax_predict, train_classifier, ClassifierParams, Mode};
use crate::propagate::gls_propagate;
use crate::rng::seeded;

/// Wall-clock seconds per stage, in execution order.
#[derive(Debug, Clone, Default)]
pub struct StageTimes(pub Vec<(&'static str, f64)>);

impl StageTimes {
    fn time<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().stage(stage);
        let secs = start.elapsed().as_secs_f64();
        log::info!("stage {stage}: {secs:.3}s");
        self.0.push((stage, secs));
        out
    }

    pub fn total(&self) -> f64 {
        self.0.iter().map(|(_, s)| s).sum()
    }

    /// `stage:secs,stage:secs,…`
    pub fn summary(&self) -> String {
        self.0
            .iter()
            .map(|(s, t)| format!("{s}:{t:.3}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Quantities that depend only on the inputs and the seed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DistillMetrics {
    pub wcss: f64,
    pub mean_shift: f64,
    pub theorem1_bound: f64,
    pub theorem2_lhs: f64,
    pub theorem2_rhs: f64,
    pub icad_before: f64,
    pub icad_after: f64,
}

impl DistillMetrics {
    pub fn to_map(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("wcss".to_string(), self.wcss),
            ("mean_shift".to_string(), self.mean_shift),
            ("theorem1_bound".to_string(), self.theorem1_bound),
            ("theorem2_lhs".to_string(), self.theorem2_lhs),
            ("theorem2_rhs".to_string(), self.theorem2_rhs),
            ("icad_before".to_string(), self.icad_before),
            ("icad_after".to_string(), self.icad_after),
        ])
    }
}

/// Result of the condensation stages, before evaluation.
#[derive(Debug, Clone)]
pub struct Distillation {
    pub condensed: CondensedGraph,
    /// X′ before refinement.
    pub x_clustered: Array2<f64>,
    pub clustering: Clustering,
    pub z: Array2<f64>,
    pub head: ClassifierParams,
    pub refine_losses: Vec<crate::caar::LossParts>,
    pub metrics: DistillMetrics,
    pub times: StageTimes,
    /// Seed reserved for the evaluation stage.
    pub eval_seed: u64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub distillation: Distillation,
    pub report: EvalReport,
}

impl PipelineOutput {
    /// The flat report: fid, bounds, ICAD, accuracy, runtimes.
    pub fn report_block(&self) -> String {
        let m = &self.distillation.metrics;
        let times = &self.distillation.times;
        let lines = [
            ("fid", fmt(self.report.fid.unwrap_or(f64::NAN))),
            ("theorem1_bound", fmt(m.theorem1_bound)),
            ("theorem2_lhs", fmt(m.theorem2_lhs)),
            ("theorem2_rhs", fmt(m.theorem2_rhs)),
            ("icad_before", fmt(m.icad_before)),
            ("icad_after", fmt(m.icad_after)),
            ("accuracy_mean", fmt(self.report.mean)),
            ("accuracy_std", fmt(self.report.std)),
            ("runtime_total_s", format!("{:.3}", times.total())),
            ("runtime_per_stage", times.summary()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Number of synthetic nodes for the configured ratio.
pub fn condensed_size(dataset: &Dataset, cfg: &PipelineConfig) -> usize {
    let base = match cfg.ratio_base {
        RatioBase::All => dataset.num_nodes(),
        RatioBase::Train => dataset.train_indices().len(),
    };
    ((cfg.ratio * base as f64).round() as usize).max(1)
}

/// Stage seeds are drawn in a fixed order from one generator.
struct Seeds {
    pretrain_init: u64,
    pretrain: u64,
    cluster: u64,
    refine: u64,
    eval: u64,
}

impl Seeds {
    fn new(seed: u64) -> Self {
        let mut rng = seeded(seed);
        Seeds {
            pretrain_init: rng.next_u64(),
            pretrain: rng.next_u64(),
            cluster: rng.next_u64(),
            refine: rng.next_u64(),
            eval: rng.next_u64(),
        }
    }
}

/// Seed the evaluation stage uses for a run seeded with `seed`.
pub fn eval_seed(seed: u64) -> u64 {
    Seeds::new(seed).eval
}

fn cluster_points(points: &ArrayView2<f64>, n: usize, seed: u64, cfg: &PipelineConfig) -> Result<Clustering> {
    if points.nrows() > cfg.minibatch_threshold {
        minibatch_kmeans(points, n, seed, &cfg.kmeans(), cfg.minibatch_size)
    } else {
        kmeans(points, n, seed, &cfg.kmeans())
    }
}

fn bound_metrics(h: &ArrayView2<f64>, clustering: &Clustering, sketch: &Sketch) -> Result<(f64, f64, f64)> {
    let h_hat = l2_normalize_rows(h);
    let h_prime = condensed_representations(sketch, &h_hat.view())?;
    let org = gaussian_stats(&h_hat.view(), false)?;
    if h_prime.nrows() < 2 {
        return Ok((f64::NAN, f64::NAN, f64::NAN));
    }
    let syn = gaussian_stats(&h_prime.view(), false)?;
    let shift = mean_shift_sq(&org, &syn);
    let lhs = covariance_term(&org, &syn)?;
    let rhs = theorem2_bound(&h_hat.view(), &h_prime.view(), clustering, &org, shift)?;
    Ok((shift, lhs, rhs))
}

fn icad_or_nan(x: &ArrayView2<f64>, labels: &[usize]) -> f64 {
    icad(x, labels).unwrap_or(f64::NAN)
}

/// Runs every stage up to and including attribute refinement.
pub fn distill(dataset: &Dataset, cfg: &PipelineConfig) -> Result<Distillation> {
    cfg.validate()?;
    let seeds = Seeds::new(cfg.seed);
    let mut times = StageTimes::default();
    let n = condensed_size(dataset, cfg);

    let work = match cfg.protocol {
        Protocol::Transductive => dataset.clone(),
        Protocol::Inductive => dataset.induced(&dataset.train_indices()),
    };
    if n >= work.num_nodes() {
        return Err(Error::Config(format!(
            "ratio {} gives {n} synthetic nodes for a graph of {}",
            cfg.ratio,
            work.num_nodes()
        )));
    }
    let train = work.train_indices();

    let (a_norm, z) = times.time("propagate", || {
        let a_norm = normalized_adjacency(&work.graph);
        let z = gls_propagate(&a_norm, &work.features.view(), cfg.propagation())?;
        Ok((a_norm, z))
    })?;

    let (head, h) = times.time("pretrain", || {
        let mut rng = seeded(seeds.pretrain_init);
        let init = ClassifierParams::init(
            z.ncols(),
            cfg.hidden,
            work.num_classes,
            cfg.depth,
            cfg.dropout,
            &mut rng,
        )?;
        let fit = train_classifier(&z.view(), &work.labels, &train, init, &cfg.pretrain(seeds.pretrain))?;
        let h = fit.params.forward(&z.view(), Mode::Eval)?;
        Ok((fit.params, h))
    })?;

    let clustering = times.time("cluster", || cluster_points(&h.view(), n, seeds.cluster, cfg))?;
    let sketch = sketching_matrices(&clustering);

    let (x_clustered, a_prime, y_prime, metrics) = times.time("condense", || {
        let x = condense_attributes(&sketch, &z.view())?;
        let a = condense_adjacency(&sketch, &a_norm)?;
        let y = condense_labels(&sketch, &h.view())?;
        let (mean_shift, lhs, rhs) = bound_metrics(&h.view(), &clustering, &sketch)?;
        let metrics = DistillMetrics {
            wcss: wcss(&h.view(), &clustering)?,
            mean_shift,
            theorem1_bound: theorem1_bound(&clustering),
            theorem2_lhs: lhs,
            theorem2_rhs: rhs,
            icad_before: icad_or_nan(&x.view(), &y),
            icad_after: f64::NAN,
        };
        Ok((x, a, y, metrics))
    })?;

    let class_graphs = times.time("class_graphs", || {
        let p = softmax_predict(&h.view());
        build_class_graphs(
            &a_norm,
            &h.view(),
            &p.view(),
            &sketch,
            cfg.rho,
            cfg.class_graph_weighting,
        )
    })?;

    let refined = times.time("refine", || {
        let rcfg = cfg.refine(seeds.refine);
        let problem = RefineProblem::new(
            &z.view(),
            &work.labels,
            &train,
            &class_graphs.condensed,
            &x_clustered.view(),
            &y_prime,
            &rcfg,
        )?;
        refine(&problem, head.clone(), &rcfg)
    })?;

    let metrics = DistillMetrics {
        icad_after: icad_or_nan(&refined.x_refined.view(), &y_prime),
        ..metrics
    };
    let a_final = if cfg.identity_adjacency {
        Array2::eye(n)
    } else {
        sparsify_condensed(&a_prime.view(), cfg.sparsify_epsilon)
    };
    let base = match cfg.ratio_base {
        RatioBase::All => dataset.num_nodes(),
        RatioBase::Train => dataset.train_indices().len(),
    };
    let condensed = CondensedGraph::new(
        refined.x_refined,
        a_final,
        y_prime,
        work.num_classes,
        CondensedMeta {
            source: dataset.name.clone(),
            ratio: n as f64 / base as f64,
            seed: cfg.seed,
            config_hash: cfg.hash(),
        },
    )
    .stage("condense")?;

    Ok(Distillation {
        condensed,
        x_clustered,
        clustering,
        z,
        head,
        refine_losses: refined.losses,
        metrics,
        times,
        eval_seed: seeds.eval,
    })
}

/// FID between evaluator outputs on the original graph and on the condensed graph.
pub fn evaluator_fid(
    params: &GcnParams,
    condensed: &CondensedGraph,
    dataset: &Dataset,
    normalize: bool,
) -> Result<f64> {
    let org_op = Propagator::from_graph(&dataset.graph);
    let syn_op = Propagator::from_dense(&condensed.a_prime.view());
    let h_org = gcn_forward(params, &org_op, &dataset.features.view(), None)?;
    let h_syn = gcn_forward(params, &syn_op, &condensed.x_prime.view(), None)?;
    fid(
        &gaussian_stats(&h_org.view(), normalize)?,
        &gaussian_stats(&h_syn.view(), normalize)?,
    )
}

/// Distills, then trains the evaluator on the condensed graph and tests it on
/// the original graph.
pub fn run_pipeline(dataset: &Dataset, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let mut distillation = distill(dataset, cfg)?;
    let condensed = &distillation.condensed;
    let report = distillation.times.time("evaluate", || {
        let (mut report, params) = evaluate_condensed(condensed, dataset, &cfg.eval(), distillation.eval_seed)?;
        report.fid = Some(evaluator_fid(&params[0], condensed, dataset, cfg.normalize_fid)?);
        Ok(report)
    })?;
    Ok(PipelineOutput { distillation, report })
}
