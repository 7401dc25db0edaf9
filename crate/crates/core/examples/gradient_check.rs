//! Compare the analytic batch gradient with central differences.
//!
//! cargo run --example gradient_check

use samcnn::data::{gen_dataset, make_signal, DataParams};
use samcnn::network::{batch_gradient, batch_loss, init_weights, InitScheme, NetConfig};
use samcnn::rng::stream_rng;

fn main() -> samcnn::Result<()> {
    let d = 32;
    let params = DataParams { d, patches: 4, sigma_p: 1.0, p: 0.2, mu_norm: 2.0 };
    let ds = gen_dataset(&params, make_signal(d, 2.0)?, 8, 3)?;
    let net = NetConfig { m: 5, d, init: InitScheme::Gaussian, sigma_0: 0.2 };
    let w = init_weights(&net, &mut stream_rng(3, &[]))?;
    let batch: Vec<usize> = (0..8).collect();

    let g = batch_gradient(&w, &ds, &batch)?;
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut probe = w.clone();
    for ((r, c), &analytic) in g.w.indexed_iter() {
        let orig = probe.w[[r, c]];
        probe.w[[r, c]] = orig + h;
        let up = batch_loss(&probe, &ds, &batch)?;
        probe.w[[r, c]] = orig - h;
        let down = batch_loss(&probe, &ds, &batch)?;
        probe.w[[r, c]] = orig;
        worst = worst.max(((up - down) / (2.0 * h) - analytic).abs());
    }
    let scale = g.w.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    println!("loss {:.6}, |grad|_inf {scale:.3e}, max fd error {worst:.3e} (relative {:.3e})",
        batch_loss(&w, &ds, &batch)?, worst / scale);
    Ok(())
}
