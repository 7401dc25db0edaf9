mod common;

use common::dataset;
use samcnn::network::{InitScheme, NetConfig};
use samcnn::optim::{train, Algorithm, TrainConfig};
use samcnn::theory::{
    activation_threshold, check_good_batches, check_logit_ratio, check_sam_deactivation, check_set_monotonicity,
};

fn run() -> (samcnn::data::Dataset, NetConfig, samcnn::optim::Trajectory) {
    let ds = dataset(500, 2, 16, 0.1, 4.0, 21);
    let net = NetConfig { m: 4, d: 500, init: InitScheme::Gaussian, sigma_0: 0.02 };
    let mut cfg = TrainConfig::new(Algorithm::Sam, 0.05, 4, 15);
    cfg.tau = 0.1;
    cfg.record_every = 1;
    cfg.record_sam_probes = true;
    let traj = train(&ds, &net, &cfg, &mut []).unwrap();
    (ds, net, traj)
}

#[test]
fn checkers_are_pure_functions_of_the_trajectory() {
    let (ds, net, traj) = run();
    let thr = activation_threshold(net.init_std(), 1.0, 500);
    let copy = traj.clone();
    assert_eq!(check_set_monotonicity(&traj, thr), check_set_monotonicity(&copy, thr));
    assert_eq!(check_logit_ratio(&traj), check_logit_ratio(&copy));
    assert_eq!(check_sam_deactivation(&traj.sam_records, 3.0), check_sam_deactivation(&copy.sam_records, 3.0));
    assert_eq!(check_good_batches(&traj.schedule, &ds), check_good_batches(&copy.schedule, &ds));
}

#[test]
fn threshold_ordering_never_fails() {
    let (_, net, traj) = run();
    for thr in [0.0, activation_threshold(net.init_std(), 1.0, 500), 1.0] {
        assert_eq!(check_set_monotonicity(&traj, thr).ordering_violations, 0);
    }
}

#[test]
fn single_sample_logit_ratio_is_one() {
    let ds = dataset(30, 2, 1, 0.0, 1.0, 2);
    let net = NetConfig { m: 2, d: 30, init: InitScheme::UniformFanIn, sigma_0: 0.0 };
    let traj = train(&ds, &net, &TrainConfig::new(Algorithm::Sgd, 0.1, 1, 5), &mut []).unwrap();
    let rep = check_logit_ratio(&traj);
    assert!(rep.per_epoch.iter().all(|&(_, r)| r == 1.0));
    assert_eq!(rep.max_ratio, 1.0);
}
