//! Generate a small dataset, check its concentration bounds and save it.
//!
//! cargo run --example gen_data

use samcnn::data::{concentration_report, gen_dataset, make_signal, DataParams};

fn main() -> samcnn::Result<()> {
    let params = DataParams { d: 2000, patches: 3, sigma_p: 1.0, p: 0.1, mu_norm: 5.0 };
    let ds = gen_dataset(&params, make_signal(params.d, params.mu_norm)?, 40, 1)?;

    let s = &ds.samples[0];
    println!("sample 0: y={} y_hat={} signal at patch {}", s.y.as_i8(), s.y_hat.as_i8(), s.signal_pos);
    println!("snr = {:.4}", params.snr());

    let rep = concentration_report(&ds, 0.05);
    println!("{rep:#?}");

    let path = std::env::temp_dir().join("samcnn_example_data.bin");
    samcnn::io::save_dataset(&ds, &path)?;
    let back = samcnn::io::load_dataset(&path)?;
    assert_eq!(back, ds);
    println!("round-tripped through {}", path.display());
    Ok(())
}
