//! Command-line front end. Every flag can also be set through an
//! environment variable `SAMCNN_<FLAG>`, e.g. `SAMCNN_JOBS=4`.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use samcnn::config::{load_toml, RunConfig};
use samcnn::data::DataParams;
use samcnn::experiments::{run_grid, GridOptions, GridSpec};
use samcnn::io::load_dataset;
use samcnn::run;

#[derive(Parser)]
#[command(name = "samcnn", version, about = "Train two-layer ReLU CNNs with SGD or SAM on signal-plus-noise data")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a training set and write it to <out>/data.bin.
    GenData {
        #[arg(long, env = "SAMCNN_D")]
        d: usize,
        #[arg(long = "P", env = "SAMCNN_P", default_value_t = 2)]
        patches: usize,
        #[arg(long, env = "SAMCNN_N")]
        n: usize,
        #[arg(long, env = "SAMCNN_SIGMA_P", default_value_t = 1.0)]
        sigma_p: f64,
        #[arg(long, env = "SAMCNN_LABEL_NOISE", default_value_t = 0.0)]
        p: f64,
        #[arg(long, env = "SAMCNN_MU_NORM")]
        mu_norm: f64,
        #[arg(long, env = "SAMCNN_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "SAMCNN_OUT")]
        out: PathBuf,
    },
    /// Train one network from a TOML run config and write a run directory.
    Train {
        #[arg(long, env = "SAMCNN_CONFIG")]
        config: PathBuf,
        #[arg(long, env = "SAMCNN_OUT")]
        out: PathBuf,
        /// Use this dataset instead of generating one from the config seed.
        #[arg(long, env = "SAMCNN_DATA")]
        data: Option<PathBuf>,
        /// Override the config's base seed.
        #[arg(long, env = "SAMCNN_SEED")]
        seed: Option<u64>,
        /// Fresh samples for the test-error estimate; 0 skips it.
        #[arg(long, env = "SAMCNN_N_TEST", default_value_t = 1000)]
        n_test: usize,
    },
    /// Run a (d, mu) grid and write results, per-trial records and heatmaps.
    Grid {
        #[arg(long, env = "SAMCNN_CONFIG")]
        config: PathBuf,
        #[arg(long, env = "SAMCNN_OUT")]
        out: PathBuf,
        /// Override the grid's base seed.
        #[arg(long, env = "SAMCNN_SEED")]
        seed: Option<u64>,
        /// Reuse finished trials already present under <out>/trials.
        #[arg(long, env = "SAMCNN_RESUME")]
        resume: bool,
        /// Worker threads; 0 picks one per core.
        #[arg(long, env = "SAMCNN_JOBS", default_value_t = 0)]
        jobs: usize,
    },
    /// Re-run the structural checks on a run directory.
    Check {
        #[arg(long, env = "SAMCNN_RUN")]
        run: PathBuf,
    },
    /// Solve for the signal-noise coefficients of a run's final weights.
    Decompose {
        #[arg(long, env = "SAMCNN_RUN")]
        run: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::GenData { d, patches, n, sigma_p, p, mu_norm, seed, out } => {
            let params = DataParams { d, patches, sigma_p, p, mu_norm };
            let ds = run::gen_data(&params, n, seed, &out)?;
            let flipped = ds.samples.iter().filter(|s| !s.is_clean()).count();
            println!("wrote {} samples ({flipped} flipped) to {}", ds.len(), out.join("data.bin").display());
        }
        Cmd::Train { config, out, data, seed, n_test } => {
            let mut cfg: RunConfig = load_toml(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate().with_context(|| format!("invalid config {}", config.display()))?;
            let ds = data.map(|p| load_dataset(&p).with_context(|| format!("reading {}", p.display()))).transpose()?;
            let s = run::train_run(&cfg, ds, n_test, &out)?;
            println!("final_train_loss {:.6e}", s.final_train_loss);
            if n_test > 0 {
                println!("test_error {:.4} +- {:.4}", s.test_error, s.test_stderr);
            }
            if let Some(v) = s.sign_violations {
                println!("coefficient sign violations {v}");
            }
        }
        Cmd::Grid { config, out, seed, resume, jobs } => {
            let mut spec: GridSpec = load_toml(&config)?;
            if let Some(s) = seed {
                spec.base_seed = s;
            }
            spec.validate().with_context(|| format!("invalid grid {}", config.display()))?;
            std::fs::create_dir_all(&out)?;
            let resolved = toml::to_string(&spec)?;
            let mut outputs = vec!["results.csv".to_string(), "trials/".into(), "checks/".into()];
            for v in &spec.variants {
                outputs.push(format!("heatmap_{}.csv", v.name));
                outputs.push(format!("heatmap_{}.pgm", v.name));
            }
            samcnn::config::RunManifest::new("grid", spec.base_seed, resolved, outputs)
            .write(&out)?;
            let opts = GridOptions { out_dir: Some(out.clone()), resume, jobs };
            let results = run_grid(&spec, &opts)?;
            let failed = results.iter().filter(|r| !r.ok()).count();
            println!("{} trials ({failed} failed); results in {}", results.len(), out.display());
        }
        Cmd::Check { run: dir } => {
            let rows = run::check_run(&dir)?;
            for r in rows {
                println!("{:<20} {:<12} {:>6}/{:<6} worst {:.4e}", r.check, r.window, r.violations, r.total, r.worst_case_value);
            }
        }
        Cmd::Decompose { run: dir } => {
            let s = run::decompose_run(&dir)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
    }
    Ok(())
}
