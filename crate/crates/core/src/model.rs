//! Multilayer perceptron classification head with analytic gradients.
//!
//! Layer `l` computes `a_l = h_{l−1} W_l + b_l`; hidden layers apply a
//! rectifier followed by inverted dropout (train mode only). The last layer
//! emits logits. `backward` returns parameter gradients together with the
//! gradient with respect to the input, which the refinement stage needs.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::{seeded, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in × out`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    /// Uniform `±1/√fan_in` initialization for weight and bias.
    pub fn init(input: usize, output: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Linear {
            weight: Array2::from_shape_simple_fn((input, output), || dist.sample(rng)),
            bias: Array1::from_shape_simple_fn(output, || dist.sample(rng)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub layers: Vec<Linear>,
    pub dropout: f64,
}

/// Whether dropout is active. Train mode draws masks from the given generator.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input fed to each layer (post-activation, post-dropout for hidden layers).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Array2<f64>>,
    /// Scaled dropout masks of hidden layers.
    masks: Vec<Option<Array2<f64>>>,
    pub logits: Array2<f64>,
}

impl ClassifierParams {
    /// `depth` weight layers: `input → hidden → … → hidden → classes`.
    /// Depth 1 is the single linear map `Z ↦ ZW + b`.
    pub fn init(
        input: usize,
        hidden: usize,
        classes: usize,
        depth: usize,
        dropout: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::invalid("classifier depth must be at least 1"));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::invalid(format!("dropout {dropout} outside [0, 1)")));
        }
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(hidden, depth - 1));
        dims.push(classes);
        let layers = dims.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        Ok(ClassifierParams { layers, dropout })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.ncols())
    }

    pub fn zeros_like(&self) -> ClassifierParams {
        ClassifierParams {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.weight.nrows(), l.weight.ncols()))
                .collect(),
            dropout: self.dropout,
        }
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &self.layers {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out
    }

    /// Accumulates `other` into `self` (same architecture).
    pub fn add_assign(&mut self, other: &ClassifierParams) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight *= factor;
            l.bias *= factor;
        }
    }

    pub fn forward(&self, z: &ArrayView2<f64>, mode: Mode<'_>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(z, mode)?.logits)
    }

    pub fn forward_cached(&self, z: &ArrayView2<f64>, mut mode: Mode<'_>) -> Result<ForwardCache> {
        if z.ncols() != self.input_dim() {
            return Err(Error::shape(format!(
                "input has {} columns, first layer expects {}",
                z.ncols(),
                self.input_dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut masks = Vec::with_capacity(last);
        let mut h = z.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut a = h.dot(&layer.weight);
            a += &layer.bias;
            inputs.push(h);
            if l == last {
                return Ok(ForwardCache {
                    inputs,
                    pre,
                    masks,
                    logits: a,
                });
            }
            let mut act = a.mapv(relu);
            let mask = match &mut mode {
                Mode::Train(rng) if self.dropout > 0.0 => {
                    let keep = 1.0 - self.dropout;
                    let m = Array2::from_shape_simple_fn(act.dim(), || {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    act *= &m;
                    Some(m)
                }
                _ => None,
            };
            pre.push(a);
            masks.push(mask);
            h = act;
        }
        unreachable!("at least one layer")
    }

    /// Backpropagates `d_logits` (∂L/∂logits). Returns parameter gradients and
    /// ∂L/∂input.
    pub fn backward(&self, cache: &ForwardCache, d_logits: &ArrayView2<f64>) -> (ClassifierParams, Array2<f64>) {
        let mut grads = self.zeros_like();
        let mut delta = d_logits.to_owned();
        for l in (0..self.layers.len()).rev() {
            let input = &cache.inputs[l];
            grads.layers[l].weight = input.t().dot(&delta);
            grads.layers[l].bias = delta.sum_axis(Axis(0));
            let mut d_input = delta.dot(&self.layers[l].weight.t());
            if l > 0 {
                // input of layer l is dropout(relu(pre[l-1]))
                if let Some(mask) = &cache.masks[l - 1] {
                    d_input *= mask;
                }
                ndarray::Zip::from(&mut d_input)
                    .and(&cache.pre[l - 1])
                    .for_each(|d, &a| {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    });
            }
            delta = d_input;
        }
        (grads, delta)
    }
}

/// Rectifier that keeps NaN (`f64::max` would hide it).
fn relu(v: f64) -> f64 {
    if v < 0.0 {
        0.0
    } else {
        v
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_predict(h: &ArrayView2<f64>) -> Array2<f64> {
    let mut p = h.to_owned();
    for mut row in p.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    p
}

pub(crate) const LOG_FLOOR: f64 = 1e-12;

/// `ln(max(p, 1e-12))`, letting NaN through so divergence stays visible.
pub(crate) fn clamp_log(p: f64) -> f64 {
    if p < LOG_FLOOR {
        LOG_FLOOR.ln()
    } else {
        p.ln()
    }
}

/// Mean negative log-likelihood of the true class over `mask` (node indices).
pub fn cross_entropy(p: &ArrayView2<f64>, labels: &[usize], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::invalid("cross-entropy over an empty mask"));
    }
    if labels.len() != p.nrows() {
        return Err(Error::shape(format!("{} labels for {} rows", labels.len(), p.nrows())));
    }
    let total: f64 = mask.iter().map(|&i| -clamp_log(p[[i, labels[i]]])).sum();
    Ok(total / mask.len() as f64)
}

/// ∂/∂logits of the masked mean cross-entropy: `(P − Y)/|mask|` on masked rows.
pub(crate) fn cross_entropy_logit_grad(p: &ArrayView2<f64>, labels: &[usize], mask: &[usize]) -> Array2<f64> {
    let mut g = Array2::zeros(p.dim());
    let scale = 1.0 / mask.len() as f64;
    for &i in mask {
        let mut row = g.row_mut(i);
        row.assign(&p.row(i));
        row[labels[i]] -= 1.0;
        row *= scale;
    }
    g
}

/// Backward pass of a row-wise softmax: maps ∂L/∂P to ∂L/∂H.
pub(crate) fn softmax_backward(p: &ArrayView2<f64>, d_p: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(p.dim());
    for ((mut o, pr), gr) in out
        .axis_iter_mut(Axis(0))
        .zip(p.axis_iter(Axis(0)))
        .zip(d_p.axis_iter(Axis(0)))
    {
        let inner = pr.dot(&gr);
        for k in 0..o.len() {
            o[k] = pr[k] * (gr[k] - inner);
        }
    }
    out
}

pub fn accuracy(logits: &ArrayView2<f64>, labels: &[usize], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let correct = nodes
        .iter()
        .filter(|&&i| crate::dense::argmax(&logits.row(i)) == labels[i])
        .count();
    correct as f64 / nodes.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// 0 = full batch.
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::invalid(format!("learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ClassifierParams,
    pub losses: Vec<f64>,
}

/// Fits the head to `labels` on the nodes in `mask` by minimizing the masked
/// cross-entropy. Only rows in `mask` are ever evaluated.
pub fn train_classifier(
    z: &ArrayView2<f64>,
    labels: &[usize],
    mask: &[usize],
    params_init: ClassifierParams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if mask.is_empty() {
        return Err(Error::invalid("training mask is empty"));
    }
    if labels.len() != z.nrows() {
        return Err(Error::shape(format!("{} labels for {} rows", labels.len(), z.nrows())));
    }
    let mut rng = seeded(cfg.seed);
    let mut params = params_init;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.weight_decay);
    let mut losses = Vec::with_capacity(cfg.epochs);

    let full_rows = z.select(Axis(0), mask);
    let full_labels: Vec<usize> = mask.iter().map(|&i| labels[i]).collect();
    let use_batches = cfg.batch_size > 0 && cfg.batch_size < mask.len();

    for epoch in 0..cfg.epochs {
        let (rows, batch_labels) = if use_batches {
            let picks = rand::seq::index::sample(&mut rng, mask.len(), cfg.batch_size).into_vec();
            (
                full_rows.select(Axis(0), &picks),
                picks.iter().map(|&k| full_labels[k]).collect::<Vec<_>>(),
            )
        } else {
            (full_rows.clone(), full_labels.clone())
        };
        let local: Vec<usize> = (0..rows.nrows()).collect();
        let cache = params.forward_cached(&rows.view(), Mode::Train(&mut rng))?;
        let p = softmax_predict(&cache.logits.view());
        let loss = cross_entropy(&p.view(), &batch_labels, &local)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        losses.push(loss);
        let d_logits = cross_entropy_logit_grad(&p.view(), &batch_labels, &local);
        let (grads, _) = params.backward(&cache, &d_logits.view());
        opt.step(&mut params.slices_mut(), &grads.slices());
    }
    Ok(TrainOutcome { params, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn identity_head(d: usize) -> ClassifierParams {
        ClassifierParams {
            layers: vec![Linear {
                weight: Array2::eye(d),
                bias: Array1::zeros(d),
            }],
            dropout: 0.0,
        }
    }

    #[test]
    fn depth_one_identity() {
        let z = array![[1.0, -2.0], [0.5, 3.0]];
        let h = identity_head(2).forward(&z.view(), Mode::Eval).unwrap();
        assert_eq!(h, z);
    }

    #[test]
    fn zero_input_gives_bias() {
        let mut rng = seeded(3);
        let p = ClassifierParams::init(3, 5, 2, 3, 0.0, &mut rng).unwrap();
        let h = p.forward(&Array2::zeros((4, 3)).view(), Mode::Eval).unwrap();
        // hidden layers see relu(b); the output is constant across rows
        for row in h.axis_iter(Axis(0)) {
            assert_eq!(row, h.row(0));
        }
        let p1 = ClassifierParams::init(3, 5, 2, 1, 0.0, &mut rng).unwrap();
        let h1 = p1.forward(&Array2::zeros((2, 3)).view(), Mode::Eval).unwrap();
        assert_eq!(h1.row(1), p1.layers[0].bias);
    }

    #[test]
    fn dimension_mismatch() {
        let z = array![[1.0, 2.0, 3.0]];
        assert!(identity_head(2).forward(&z.view(), Mode::Eval).is_err());
    }

    #[test]
    fn softmax_cases() {
        let equal = array![[0.3, 0.3, 0.3, 0.3]];
        let p = softmax_predict(&equal.view());
        for v in p.iter() {
            assert!((v - 0.25).abs() < 1e-15);
        }
        let two = array![[2f64.ln(), 0.0]];
        let p = softmax_predict(&two.view());
        assert!((p[[0, 0]] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[[0, 1]] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_cases() {
        let perfect = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(cross_entropy(&perfect.view(), &[0, 1], &[0, 1]).unwrap() <= 1e-10);
        let uniform = Array2::from_elem((3, 5), 0.2);
        let ce = cross_entropy(&uniform.view(), &[0, 4, 2], &[0, 1, 2]).unwrap();
        assert!((ce - 5f64.ln()).abs() < 1e-14);
        assert!(cross_entropy(&uniform.view(), &[0, 4, 2], &[]).is_err());
    }

    #[test]
    fn cross_entropy_scalar_oracle() {
        let p = array![[0.7, 0.2, 0.1], [0.1, 0.1, 0.8], [0.25, 0.5, 0.25]];
        let labels = [0, 2, 0];
        let expected = -(0.7f64.ln() + 0.25f64.ln()) / 2.0;
        let ce = cross_entropy(&p.view(), &labels, &[0, 2]).unwrap();
        assert!((ce - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let mut rng = seeded(1);
        let init = ClassifierParams::init(2, 4, 2, 2, 0.0, &mut rng).unwrap();
        let z = array![[1.0, 0.0], [0.0, 1.0]];
        let cfg = TrainConfig {
            epochs: 5,
            learning_rate: 0.0,
            weight_decay: 5e-4,
            seed: 0,
            batch_size: 0,
            optimizer: OptimizerKind::Adam,
        };
        let out = train_classifier(&z.view(), &[0, 1], &[0, 1], init.clone(), &cfg).unwrap();
        assert_eq!(out.params, init);
    }

    #[test]
    fn separable_two_class_reaches_full_accuracy() {
        let mut rng = seeded(11);
        let n = 40;
        let z = Array2::from_shape_fn((n, 2), |(i, j)| {
            let side = if i < n / 2 { -1.0 } else { 1.0 };
            let jitter = ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5;
            if j == 0 {
                side * 2.0 + 0.3 * jitter
            } else {
                jitter
            }
        });
        let labels: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
        let mask: Vec<usize> = (0..n).collect();
        let init = ClassifierParams::init(2, 1, 2, 1, 0.0, &mut rng).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            learning_rate: 0.1,
            weight_decay: 0.0,
            seed: 0,
            batch_size: 0,
            optimizer: OptimizerKind::Sgd,
        };
        let out = train_classifier(&z.view(), &labels, &mask, init, &cfg).unwrap();
        let logits = out.params.forward(&z.view(), Mode::Eval).unwrap();
        assert_eq!(accuracy(&logits.view(), &labels, &mask), 1.0);
    }

    #[test]
    fn diverges_on_nan_input() {
        let mut rng = seeded(2);
        let init = ClassifierParams::init(2, 3, 2, 2, 0.0, &mut rng).unwrap();
        let z = array![[f64::NAN, 0.0], [0.0, 1.0]];
        let cfg = TrainConfig {
            epochs: 3,
            learning_rate: 0.01,
            weight_decay: 0.0,
            seed: 0,
            batch_size: 0,
            optimizer: OptimizerKind::Adam,
        };
        let err = train_classifier(&z.view(), &[0, 1], &[0, 1], init, &cfg).unwrap_err();
        assert!(matches!(err, Error::Diverged { epoch: 0 }));
    }
}
