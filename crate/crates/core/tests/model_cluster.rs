mod common;

use common::*;
use graphdistill::cluster::{
    kmeans, kmeans_traced, minibatch_kmeans, sketching_matrices, wcss, Clustering, KMeansConfig,
};
use graphdistill::model::{cross_entropy, softmax_predict, train_classifier, ClassifierParams, Mode, TrainConfig};
use graphdistill::optim::OptimizerKind;
use ndarray::{Array1, Array2, Axis};
use proptest::prelude::*;

fn ce_loss(params: &ClassifierParams, z: &Array2<f64>, labels: &[usize], mask: &[usize]) -> f64 {
    let h = params.forward(&z.view(), Mode::Eval).unwrap();
    cross_entropy(&softmax_predict(&h.view()).view(), labels, mask).unwrap()
}

/// dL/dH for the masked mean cross-entropy: (P − Y)/|mask| on masked rows.
fn ce_logit_grad(params: &ClassifierParams, z: &Array2<f64>, labels: &[usize], mask: &[usize]) -> Array2<f64> {
    let p = softmax_predict(&params.forward(&z.view(), Mode::Eval).unwrap().view());
    let mut d = Array2::zeros(p.dim());
    for &i in mask {
        for k in 0..p.ncols() {
            let y = if labels[i] == k { 1.0 } else { 0.0 };
            d[[i, k]] = (p[[i, k]] - y) / mask.len() as f64;
        }
    }
    d
}

#[test]
fn head_gradients_match_finite_differences() {
    for seed in 0..20u64 {
        let mut r = rng(seed);
        let n = 6 + seed as usize % 15;
        let d = 2 + seed as usize % 7;
        let k = 2 + seed as usize % 3;
        let depth = 1 + seed as usize % 2;
        let z = gaussian(n, d, &mut r);
        let labels = random_labels(n, k, &mut r);
        let mask: Vec<usize> = (0..n).filter(|i| i % 3 != 0).collect();
        let params = ClassifierParams::init(d, 5, k, depth, 0.0, &mut r).unwrap();
        let cache = params.forward_cached(&z.view(), Mode::Eval).unwrap();
        let (grads, _) = params.backward(&cache, &ce_logit_grad(&params, &z, &labels, &mask).view());
        let fd = head_fd_gradient(&params, 1e-5, |p| ce_loss(p, &z, &labels, &mask));
        for (t, (analytic, numeric)) in grads.slices().iter().zip(&fd).enumerate() {
            let err = rel_err(analytic, numeric);
            assert!(err <= 1e-4, "seed {seed}, tensor {t}: relative error {err}");
        }
    }
}

#[test]
fn input_gradient_matches_finite_differences() {
    let mut r = rng(5);
    let z = gaussian(7, 4, &mut r);
    let labels = random_labels(7, 3, &mut r);
    let mask: Vec<usize> = (0..7).collect();
    let params = ClassifierParams::init(4, 6, 3, 2, 0.0, &mut r).unwrap();
    let cache = params.forward_cached(&z.view(), Mode::Eval).unwrap();
    let (_, d_input) = params.backward(&cache, &ce_logit_grad(&params, &z, &labels, &mask).view());
    let fd = matrix_fd_gradient(&z, 1e-5, |zz| ce_loss(&params, zz, &labels, &mask));
    assert!(rel_err(d_input.as_slice().unwrap(), fd.as_slice().unwrap()) <= 1e-4);
}

#[test]
fn depth_two_matches_dense_reference() {
    let mut r = rng(8);
    let z = gaussian(9, 4, &mut r);
    let params = ClassifierParams::init(4, 6, 3, 2, 0.0, &mut r).unwrap();
    let (l1, l2) = (&params.layers[0], &params.layers[1]);
    let mut expected = Array2::<f64>::zeros((9, 3));
    for i in 0..9 {
        let mut hidden = [0.0; 6];
        for (h, slot) in hidden.iter_mut().enumerate() {
            let mut acc = l1.bias[h];
            for c in 0..4 {
                acc += z[[i, c]] * l1.weight[[c, h]];
            }
            *slot = acc.max(0.0);
        }
        for o in 0..3 {
            let mut acc = l2.bias[o];
            for (h, v) in hidden.iter().enumerate() {
                acc += v * l2.weight[[h, o]];
            }
            expected[[i, o]] = acc;
        }
    }
    let got = params.forward(&z.view(), Mode::Eval).unwrap();
    assert!(max_abs_diff(&got, &expected) < 1e-12);
}

#[test]
fn full_batch_descent_does_not_increase_loss() {
    for seed in 0..20u64 {
        let mut r = rng(100 + seed);
        let z = gaussian(20, 5, &mut r);
        let labels = random_labels(20, 3, &mut r);
        let mask: Vec<usize> = (0..20).collect();
        let params = ClassifierParams::init(5, 8, 3, 1 + seed as usize % 2, 0.0, &mut r).unwrap();
        let cfg = TrainConfig {
            epochs: 11,
            learning_rate: 0.05,
            weight_decay: 0.0,
            seed,
            batch_size: 0,
            optimizer: OptimizerKind::Sgd,
        };
        let losses = train_classifier(&z.view(), &labels, &mask, params, &cfg)
            .unwrap()
            .losses;
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "seed {seed}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn cross_entropy_scalar_oracle() {
    let h: Array2<f64> = ndarray::array![[0.3, -1.2, 2.0], [1.0, 1.0, 0.0], [-0.5, 0.25, 0.75]];
    let labels = [2, 0, 1];
    let mask = [0, 1, 2];
    let mut expected = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = h.row(i);
        let denom: f64 = row.iter().map(|v| v.exp()).sum();
        expected -= (row[y].exp() / denom).ln();
    }
    expected /= 3.0;
    let got = cross_entropy(&softmax_predict(&h.view()).view(), &labels, &mask).unwrap();
    assert!((got - expected).abs() < 1e-14);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_shift_preserves_argmax(
        seed in 0u64..1000,
        shifts in prop::collection::vec(-50.0f64..50.0, 5),
    ) {
        let mut r = rng(seed);
        let h = gaussian(5, 7, &mut r) * 3.0;
        let p = softmax_predict(&h.view());
        for row in p.rows() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
        let mut shifted = h.clone();
        for (mut row, s) in shifted.rows_mut().into_iter().zip(&shifts) {
            row += *s;
        }
        let q = softmax_predict(&shifted.view());
        prop_assert_eq!(
            graphdistill::dense::argmax_rows(&p.view()),
            graphdistill::dense::argmax_rows(&q.view())
        );
        prop_assert!(max_abs_diff(&p, &q) < 1e-12);
    }
}

fn brute_wcss(points: &Array2<f64>, assignment: &[usize], n: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..n {
        let members: Vec<usize> = (0..points.nrows()).filter(|&j| assignment[j] == c).collect();
        if members.is_empty() {
            continue;
        }
        let mean = points.select(Axis(0), &members).mean_axis(Axis(0)).unwrap();
        for &j in &members {
            for (a, b) in points.row(j).iter().zip(mean.iter()) {
                total += (a - b) * (a - b);
            }
        }
    }
    total
}

#[test]
fn wcss_never_increases_across_iterations() {
    for seed in 0..50u64 {
        let mut r = rng(seed);
        let pts = gaussian(60, 3, &mut r);
        let n = 2 + seed as usize % 7;
        let trace = kmeans_traced(&pts.view(), n, seed, &KMeansConfig::default()).unwrap();
        for w in trace.wcss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "seed {seed}: {} -> {}", w[0], w[1]);
        }
        let final_wcss = wcss(&pts.view(), &trace.clustering).unwrap();
        assert!(final_wcss <= trace.wcss_history[0] + 1e-9);
    }
}

/// Lowest WCSS over every split of 8 points into two nonempty groups.
fn best_bipartition(points: &Array2<f64>) -> f64 {
    let n = points.nrows();
    (1u32..(1 << (n - 1)))
        .map(|mask| {
            let assignment: Vec<usize> = (0..n)
                .map(|j| if j > 0 && mask >> (j - 1) & 1 == 1 { 1 } else { 0 })
                .collect();
            brute_wcss(points, &assignment, 2)
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn two_means_on_eight_points_is_optimal() {
    let restarts = KMeansConfig {
        n_init: 10,
        ..KMeansConfig::default()
    };
    for seed in 0..10u64 {
        let mut r = rng(1000 + seed);
        let pts = gaussian(8, 2, &mut r);
        let c = kmeans(&pts.view(), 2, seed, &restarts).unwrap();
        let got = wcss(&pts.view(), &c).unwrap();
        let best = best_bipartition(&pts);
        assert!((got - best).abs() <= 1e-9, "seed {seed}: {got} vs optimum {best}");
    }
}

#[test]
fn wcss_matches_double_loop() {
    for seed in 0..10u64 {
        let mut r = rng(seed);
        let pts = gaussian(25, 4, &mut r);
        let c = random_clustering(&pts.view(), 5, &mut r);
        let got = wcss(&pts.view(), &c).unwrap();
        assert!((got - brute_wcss(&pts, c.assignment(), 5)).abs() < 1e-10);
    }
}

fn two_clouds(seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut r = rng(seed);
    let mut pts = gaussian(40, 2, &mut r) * 0.1;
    let truth: Vec<usize> = (0..40).map(|i| i / 20).collect();
    for (mut row, &t) in pts.rows_mut().into_iter().zip(&truth) {
        row[0] += if t == 0 { -10.0 } else { 10.0 };
    }
    (pts, truth)
}

fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.iter().zip(b).all(|(&x, &y)| (x == a[0]) == (y == b[0]))
}

#[test]
fn separated_clouds_are_recovered() {
    let (pts, truth) = two_clouds(3);
    let c = kmeans(&pts.view(), 2, 0, &KMeansConfig::default()).unwrap();
    assert!(same_partition(c.assignment(), &truth));
    let m = minibatch_kmeans(&pts.view(), 2, 0, &KMeansConfig::default(), 8).unwrap();
    assert!(same_partition(m.assignment(), &truth));
}

#[test]
fn minibatch_close_to_full_batch() {
    for seed in 0..5u64 {
        let mut r = rng(seed);
        let pts = gaussian(400, 4, &mut r);
        let cfg = KMeansConfig::default();
        let full = wcss(&pts.view(), &kmeans(&pts.view(), 6, seed, &cfg).unwrap()).unwrap();
        let mini = wcss(&pts.view(), &minibatch_kmeans(&pts.view(), 6, seed, &cfg, 100).unwrap()).unwrap();
        assert!(mini <= 1.1 * full, "seed {seed}: {mini} vs {full}");
    }
}

#[test]
fn minibatch_with_full_batch_equals_kmeans() {
    let mut r = rng(2);
    let pts = gaussian(50, 3, &mut r);
    let cfg = KMeansConfig::default();
    let a = kmeans(&pts.view(), 4, 9, &cfg).unwrap();
    let b = minibatch_kmeans(&pts.view(), 4, 9, &cfg, 50).unwrap();
    assert_eq!(a, b);
}

#[test]
fn kmeans_is_deterministic_and_rejects_bad_n() {
    let mut r = rng(4);
    let pts = gaussian(30, 3, &mut r);
    let cfg = KMeansConfig::default();
    let a = kmeans(&pts.view(), 5, 1, &cfg).unwrap();
    let b = kmeans(&pts.view(), 5, 1, &cfg).unwrap();
    assert_eq!(a.assignment(), b.assignment());
    assert!(kmeans(&pts.view(), 0, 1, &cfg).is_err());
    assert!(kmeans(&pts.view(), 31, 1, &cfg).is_err());
    let all = kmeans(&pts.view(), 30, 1, &cfg).unwrap();
    assert_eq!(wcss(&pts.view(), &all).unwrap(), 0.0);
    assert!(all.sizes().iter().all(|&s| s == 1));
}

#[test]
fn sketch_pools_cluster_means() {
    for seed in 0..10u64 {
        let mut r = rng(seed);
        let pts = gaussian(30, 4, &mut r);
        let c = random_clustering(&pts.view(), 6, &mut r);
        let sketch = sketching_matrices(&c);
        let dense = sketch.sketch_dense();
        assert_eq!(dense, dense_sketch(&c));
        let ones = Array1::<f64>::ones(30);
        let col_sums = dense.t().dot(&ones);
        assert!(col_sums.iter().all(|&s| (s - 1.0).abs() < 1e-15));
        let membership = sketch.membership_dense();
        let sizes: Vec<f64> = c.sizes().iter().map(|&s| s as f64).collect();
        assert_eq!(membership.sum_axis(Axis(0)).to_vec(), sizes);
        let pooled = sketch.pool(&pts.view()).unwrap();
        for i in 0..6 {
            let mean = pts.select(Axis(0), &c.members(i)).mean_axis(Axis(0)).unwrap();
            for (a, b) in pooled.row(i).iter().zip(mean.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn clustering_rejects_empty_clusters() {
    let pts = Array2::<f64>::zeros((3, 2));
    assert!(Clustering::from_assignment(vec![0, 0, 2], 3, &pts.view()).is_err());
}
