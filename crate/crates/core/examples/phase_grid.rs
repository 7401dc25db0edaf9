//! Small phase diagram with SGD and SAM; writes results and heatmaps to a
//! temp directory and prints the SGD table.
//!
//! cargo run --release --example phase_grid

use samcnn::config::parse_toml;
use samcnn::experiments::{aggregate, run_grid, GridOptions, GridSpec};
use samcnn::theory::{classify_regime, RegimeThresholds};

const GRID: &str = r#"
n_test = 500
seeds = [0, 1]
d_values = [1000, 5000, 20000]
mu_values = [1.0, 3.0, 6.0, 10.0]

[data]
n = 20
sigma_p = 1.0

[net]
m = 10
init = "uniform_fan_in"

[[variant]]
name = "sgd"
algo = "sgd"
eta = 0.01
batch_size = 20
epochs = 100

[[variant]]
name = "sam"
algo = "sam"
eta = 0.01
batch_size = 20
epochs = 100
tau = 0.3
"#;

fn main() -> samcnn::Result<()> {
    let spec: GridSpec = parse_toml(GRID)?;
    let out = std::env::temp_dir().join("samcnn_phase_grid");
    let results = run_grid(&spec, &GridOptions { out_dir: Some(out.clone()), resume: true, jobs: 0 })?;
    let rows = aggregate(&spec, &results);
    let th = RegimeThresholds::default();
    println!("{:>6} {:>5} {:>8} {:>8}  regime", "d", "mu", "sgd", "sam");
    for &d in &spec.d_values {
        for &mu in &spec.mu_values {
            let get = |a: &str| rows.iter().find(|r| r.algo == a && r.d == d && r.mu_norm == mu).unwrap().mean_test_error;
            let regime = classify_regime(spec.data.n, mu, d, spec.data.patches, spec.data.sigma_p, &th);
            println!("{d:>6} {mu:>5} {:>8.3} {:>8.3}  {regime:?}", get("sgd"), get("sam"));
        }
    }
    println!("written to {}", out.display());
    Ok(())
}
