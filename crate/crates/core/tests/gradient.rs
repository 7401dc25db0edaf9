mod common;

use common::{batch_basis, dataset, gaussian_weights, span_residual};
use proptest::prelude::*;
use samcnn::network::{batch_gradient, batch_loss, forward, loss, loss_grad, relu_grad, Weights};
use samcnn::optim::{sam_step, sgd_step};

fn fd_error(w: &Weights, ds: &samcnn::data::Dataset, batch: &[usize]) -> f64 {
    let g = batch_gradient(w, ds, batch).unwrap();
    let h = 1e-6;
    let mut probe = w.clone();
    let mut worst = 0.0f64;
    for r in 0..w.w.nrows() {
        for c in 0..w.d() {
            let orig = w.w[[r, c]];
            probe.w[[r, c]] = orig + h;
            let up = batch_loss(&probe, ds, batch).unwrap();
            probe.w[[r, c]] = orig - h;
            let down = batch_loss(&probe, ds, batch).unwrap();
            probe.w[[r, c]] = orig;
            worst = worst.max(((up - down) / (2.0 * h) - g.w[[r, c]]).abs());
        }
    }
    worst / g.w.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE)
}

fn clear_of_kinks(w: &Weights, ds: &samcnn::data::Dataset) -> bool {
    w.w.outer_iter()
        .all(|f| f.dot(&ds.mu).abs() >= 1e-4 && ds.samples.iter().all(|s| f.dot(&s.xi).abs() >= 1e-4))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn gradient_matches_central_differences(
        d in 2usize..=64, m in 1usize..=8, patches in 2usize..=4, b in 1usize..=16,
        mu in 0.5f64..3.0, seed in any::<u64>(),
    ) {
        let ds = dataset(d, patches, b, 0.2, mu, seed);
        let w = gaussian_weights(m, d, 1.0 / (d as f64).sqrt(), seed ^ 1);
        prop_assume!(clear_of_kinks(&w, &ds));
        let batch: Vec<usize> = (0..b).collect();
        prop_assert!(fd_error(&w, &ds, &batch) <= 1e-5);
    }

    #[test]
    fn forward_is_positively_homogeneous(d in 1usize..20, m in 1usize..5, c in 0.0f64..10.0, seed in any::<u64>()) {
        let ds = dataset(d, 3, 1, 0.0, 1.0, seed);
        let w = gaussian_weights(m, d, 1.0, seed);
        let x = ds.samples[0].patches(&ds.mu, 3);
        let views: Vec<_> = x.iter().map(|v| v.view()).collect();
        let f = forward(&w, &views).unwrap();
        let mut scaled = w.clone();
        scaled.w.mapv_inplace(|v| c * v);
        let fc = forward(&scaled, &views).unwrap();
        prop_assert!((fc - c * f).abs() <= 1e-12 * (1.0 + (c * f).abs()));
    }

    #[test]
    fn gradient_and_updates_stay_in_batch_span(
        d in 20usize..80, m in 1usize..5, n in 2usize..10, seed in any::<u64>(), tau in 0.0f64..1.0,
    ) {
        let ds = dataset(d, 2, n, 0.1, 2.0, seed);
        let w = gaussian_weights(m, d, 0.1, seed ^ 7);
        let batch: Vec<usize> = (0..n).step_by(2).collect();
        let basis = batch_basis(&ds, &batch);
        let g = batch_gradient(&w, &ds, &batch).unwrap();
        let sgd = sgd_step(&w, &ds, &batch, 0.3).unwrap();
        let sam = sam_step(&w, &ds, &batch, 0.3, tau).unwrap();
        for row in 0..2 * m {
            prop_assert!(span_residual(g.w.row(row), &basis) <= 1e-10);
            let du = &sgd.w.row(row) - &w.w.row(row);
            prop_assert!(span_residual(du.view(), &basis) <= 1e-10);
            let dv = &sam.w.row(row) - &w.w.row(row);
            prop_assert!(span_residual(dv.view(), &basis) <= 1e-10);
        }
    }
}

#[test]
fn loss_derivative_range_and_shape() {
    let zs: Vec<f64> = (-4000..=4000).map(|k| k as f64 * 0.01).collect();
    // Strict bounds hold in f64 only while exp(-|z|) is representable next to 1.
    for &z in &zs {
        let g = loss_grad(z);
        if z.abs() <= 30.0 {
            assert!(g < 0.0 && g > -1.0, "l'({z}) = {g}");
        } else {
            assert!((-1.0..=0.0).contains(&g), "l'({z}) = {g}");
        }
    }
    for w in zs.windows(3) {
        let (a, b, c) = (loss(w[0]), loss(w[1]), loss(w[2]));
        assert!(b <= a && c <= b, "decreasing at {}", w[1]);
        if w[1].abs() <= 30.0 {
            assert!(b < a, "strictly decreasing at {}", w[1]);
        }
        assert!(a + c - 2.0 * b >= -4.0 * f64::EPSILON * (1.0 + b.abs()), "convex at {}", w[1]);
    }
    assert_eq!(relu_grad(0.0), 1.0);
    assert_eq!(relu_grad(-1e-300), 0.0);
}
