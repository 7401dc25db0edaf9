//! With flipped labels the network still fits every training point, and on
//! a strong-signal cell its test error settles near the flip rate.
//!
//! cargo run --release --example label_noise

use samcnn::data::{gen_dataset, make_signal, DataParams};
use samcnn::experiments::estimate_test_error;
use samcnn::network::{InitScheme, NetConfig};
use samcnn::optim::{train, Algorithm, TrainConfig};
use samcnn::rng::stream_rng;
use samcnn::theory::check_logit_ratio;

fn main() -> samcnn::Result<()> {
    let params = DataParams { d: 1000, patches: 2, sigma_p: 1.0, p: 0.1, mu_norm: 10.0 };
    let ds = gen_dataset(&params, make_signal(params.d, params.mu_norm)?, 20, 2)?;
    let flipped: Vec<usize> = (0..ds.len()).filter(|&i| !ds.samples[i].is_clean()).collect();
    println!("flipped samples: {flipped:?}");

    let net = NetConfig { m: 10, d: params.d, init: InitScheme::UniformFanIn, sigma_0: 0.0 };
    let mut cfg = TrainConfig::new(Algorithm::Sgd, 0.01, 20, 1000);
    cfg.seed = 2;
    cfg.record_weights = true;
    let traj = train(&ds, &net, &cfg, &mut [])?;

    for s in traj.snapshots.iter().step_by(200) {
        let w = s.weights.as_ref().expect("weights recorded");
        let (err, _) = estimate_test_error(w, &params, &ds.mu, 1000, &mut stream_rng(7, &[]))?;
        println!("epoch {:>4}: train loss {:.4}, min margin {:+.3}, test error {err:.3}", s.epoch, s.train_loss, s.min_margin());
    }
    println!("max logit ratio {:.2}", check_logit_ratio(&traj).max_ratio);
    Ok(())
}
