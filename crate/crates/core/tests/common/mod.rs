#![allow(dead_code)]

use ndarray::{Array1, ArrayView1};

use samcnn::data::{gen_dataset, make_signal, DataParams, Dataset};
use samcnn::network::{init_weights, InitScheme, NetConfig, Weights};
use samcnn::rng::stream_rng;

pub fn dataset(d: usize, patches: usize, n: usize, p: f64, mu_norm: f64, seed: u64) -> Dataset {
    let params = DataParams { d, patches, sigma_p: 1.0, p, mu_norm };
    gen_dataset(&params, make_signal(d, mu_norm).unwrap(), n, seed).unwrap()
}

pub fn gaussian_weights(m: usize, d: usize, sigma_0: f64, seed: u64) -> Weights {
    let net = NetConfig { m, d, init: InitScheme::Gaussian, sigma_0 };
    init_weights(&net, &mut stream_rng(seed, &[])).unwrap()
}

/// Relative residual of projecting `v` onto `span(basis)` (modified Gram-Schmidt).
pub fn span_residual(v: ArrayView1<'_, f64>, basis: &[Array1<f64>]) -> f64 {
    let norm = v.dot(&v).sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    let mut q: Vec<Array1<f64>> = Vec::new();
    for b in basis {
        let mut u = b.clone();
        for e in &q {
            let c = u.dot(e);
            u.scaled_add(-c, e);
        }
        let un = u.dot(&u).sqrt();
        if un > 1e-12 * b.dot(b).sqrt().max(1e-300) {
            q.push(u / un);
        }
    }
    let mut r = v.to_owned();
    for _ in 0..2 {
        for e in &q {
            let c = r.dot(e);
            r.scaled_add(-c, e);
        }
    }
    r.dot(&r).sqrt() / norm
}

pub fn batch_basis(ds: &Dataset, batch: &[usize]) -> Vec<Array1<f64>> {
    let mut b = vec![ds.mu.clone()];
    b.extend(batch.iter().map(|&i| ds.samples[i].xi.clone()));
    b
}

pub fn max_abs_diff(a: &Weights, b: &Weights) -> f64 {
    a.w.iter().zip(b.w.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
