//! Train SGD and SAM from the same initialization on a harmful-regime cell
//! and compare training loss and test error.
//!
//! cargo run --release --example sgd_vs_sam

use samcnn::data::{gen_dataset, make_signal, DataParams};
use samcnn::experiments::estimate_test_error;
use samcnn::network::{init_weights, InitScheme, NetConfig};
use samcnn::optim::{train_from, Algorithm, TrainConfig};
use samcnn::rng::stream_rng;

fn main() -> samcnn::Result<()> {
    let params = DataParams { d: 20000, patches: 2, sigma_p: 1.0, p: 0.0, mu_norm: 6.0 };
    let ds = gen_dataset(&params, make_signal(params.d, params.mu_norm)?, 20, 0)?;
    let net = NetConfig { m: 10, d: params.d, init: InitScheme::UniformFanIn, sigma_0: 0.0 };
    let w0 = init_weights(&net, &mut stream_rng(0, &[1]))?;

    for (algo, tau) in [(Algorithm::Sgd, 0.0), (Algorithm::Sam, 0.03), (Algorithm::Sam, 0.3)] {
        let mut cfg = TrainConfig::new(algo, 0.01, 20, 100);
        cfg.tau = tau;
        let traj = train_from(&ds, w0.clone(), &cfg, &mut [])?;
        let (err, se) = estimate_test_error(&traj.final_weights, &params, &ds.mu, 1000, &mut stream_rng(0, &[2]))?;
        println!("{algo:>3} tau={tau:<5} train loss {:.4}  test error {err:.3} +- {se:.3}", traj.final_loss());
    }
    Ok(())
}
