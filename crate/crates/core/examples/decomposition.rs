//! Track the signal/noise coefficients during minibatch SAM and compare
//! them with the least-squares oracle at every epoch.
//!
//! cargo run --example decomposition

use samcnn::data::{gen_dataset, make_signal, DataParams};
use samcnn::decomposition::{summarize, Basis, Tracker};
use samcnn::network::{init_weights, InitScheme, NetConfig};
use samcnn::optim::{train_from, Algorithm, TrainConfig, TrainHook};
use samcnn::rng::stream_rng;

fn main() -> samcnn::Result<()> {
    let params = DataParams { d: 1000, patches: 2, sigma_p: 1.0, p: 0.1, mu_norm: 8.0 };
    let ds = gen_dataset(&params, make_signal(params.d, params.mu_norm)?, 16, 5)?;
    let net = NetConfig { m: 4, d: params.d, init: InitScheme::UniformFanIn, sigma_0: 0.0 };
    let w0 = init_weights(&net, &mut stream_rng(5, &[]))?;
    let mut cfg = TrainConfig::new(Algorithm::Sam, 0.05, 4, 30);
    cfg.tau = 0.05;

    let basis = Basis::new(&ds)?;
    println!("basis condition number {:.2}", basis.condition);
    let mut tracker = Tracker::new(&ds, &w0, cfg.eta, cfg.batch_size).with_oracle(basis);
    train_from(&ds, w0, &cfg, &mut [&mut tracker as &mut dyn TrainHook])?;

    println!("max |tracked - oracle|: gamma {:.2e}, rho {:.2e}; sign violations {}",
        tracker.max_gamma_err, tracker.max_rho_err, tracker.sign_violations);
    for s in summarize(cfg.epochs, 0, &tracker.coeffs).iter().take(4) {
        println!("j={:+} r={} gamma={:.4} sum_zeta={:.4} min_omega={:.4}", s.j, s.r, s.gamma, s.sum_zeta, s.min_omega);
    }
    tracker.write_series_csv(std::io::stdout().lock()).map(|_| ()).ok();
    Ok(())
}
