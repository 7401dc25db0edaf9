//! During the first SAM stage the perturbation switches off noise neurons
//! that were active on the batch. Count how often that fails as tau grows.
//!
//! cargo run --release --example sam_deactivation

use samcnn::data::{gen_dataset, make_signal, DataParams};
use samcnn::network::{InitScheme, NetConfig};
use samcnn::optim::{train, Algorithm, TrainConfig};
use samcnn::theory::{check_sam_deactivation, first_stage_epochs};

fn main() -> samcnn::Result<()> {
    let (d, n, m, b, eta, mu) = (2000, 10, 10, 5, 0.01, 1.0);
    let params = DataParams { d, patches: 2, sigma_p: 1.0, p: 0.0, mu_norm: mu };
    let ds = gen_dataset(&params, make_signal(d, mu)?, n, 3)?;
    let scale = 1.0 / (2.0 * (d as f64).sqrt());
    let net = NetConfig { m, d, init: InitScheme::Gaussian, sigma_0: scale };
    let t1 = first_stage_epochs(m, b, n, eta, mu);
    println!("first stage: {t1:.1} epochs");

    for c in [0.1, 0.5, 1.0, 2.0, 4.0] {
        let mut cfg = TrainConfig::new(Algorithm::Sam, eta, b, t1.ceil() as usize);
        cfg.tau = c * m as f64 * (b as f64).sqrt() * scale;
        cfg.record_alignment = false;
        cfg.record_sam_probes = true;
        let traj = train(&ds, &net, &cfg, &mut [])?;
        let rep = check_sam_deactivation(&traj.sam_records, t1);
        println!("c={c:<4} tau={:.3}  {} / {} active events survive the perturbation", cfg.tau, rep.violations, rep.events);
    }
    Ok(())
}
