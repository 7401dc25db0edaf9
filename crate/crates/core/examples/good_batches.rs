//! Fraction of minibatches whose clean-label counts are balanced, for a few
//! batch sizes.
//!
//! cargo run --example good_batches

use samcnn::data::{gen_dataset, make_signal, DataParams};
use samcnn::optim::epoch_schedule;
use samcnn::rng::stream_rng;
use samcnn::theory::check_good_batches;

fn main() -> samcnn::Result<()> {
    let params = DataParams { d: 10, patches: 2, sigma_p: 1.0, p: 0.1, mu_norm: 1.0 };
    let ds = gen_dataset(&params, make_signal(10, 1.0)?, 120, 4)?;
    for b in [4, 8, 20, 40, 120] {
        let mut rng = stream_rng(4, &[b as u64]);
        let schedule = (0..200).map(|_| epoch_schedule(ds.len(), b, &mut rng)).collect::<samcnn::Result<Vec<_>>>()?;
        let rep = check_good_batches(&schedule, &ds);
        println!(
            "B={b:>3}: mean good fraction y=+1 {:.3}, y=-1 {:.3}; worst epoch {:.3} / {:.3}",
            rep.mean_fraction[0], rep.mean_fraction[1], rep.min_fraction[0], rep.min_fraction[1]
        );
    }
    Ok(())
}
