//! Run directories: what `train` writes and what `check` / `decompose` read.
//!
//! ```text
//! config.toml       resolved run configuration
//! manifest.json     version, seed, outputs, conventions
//! data.bin          training set
//! w0.bin, w.bin     initial and final weights
//! metrics.csv       t,b,train_loss,min_margin,max_margin
//! trajectory.json   snapshots, schedule, SAM probe records
//! tracked.json      tracked coefficient history (when tracking is on)
//! coeffs.csv        per-filter coefficient series
//! checks.csv        structural check report
//! summary.json      final loss and test error
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, RunManifest};
use crate::data::{gen_dataset, make_signal, DataParams, Dataset};
use crate::decomposition::{oracle_solve, write_tensor_csv, Basis, TrackedRecord, Tracker};
use crate::error::{Error, Result};
use crate::experiments::{estimate_test_error, trial_checks};
use crate::io::{load_dataset, load_weights, save_dataset, save_weights, write_atomic};
use crate::network::init_weights;
use crate::optim::{train_from, TrainHook, Trajectory};
use crate::rng::{stream, stream_rng};
use crate::theory::{write_report_csv, CheckRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    #[serde(deserialize_with = "crate::io::nullable_f64")]
    pub final_train_loss: f64,
    #[serde(deserialize_with = "crate::io::nullable_f64")]
    pub test_error: f64,
    #[serde(deserialize_with = "crate::io::nullable_f64")]
    pub test_stderr: f64,
    pub n_test: usize,
    pub sign_violations: Option<usize>,
    pub max_oracle_err: Option<f64>,
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    serde_json::to_vec(v).map_err(|e| Error::Format(e.to_string()))
}

fn from_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Generate a dataset and write `data.bin` plus a manifest into `out`.
pub fn gen_data(params: &DataParams, n: usize, seed: u64, out: &Path) -> Result<Dataset> {
    let ds = gen_dataset(params, make_signal(params.d, params.mu_norm)?, n, seed)?;
    std::fs::create_dir_all(out)?;
    save_dataset(&ds, &out.join("data.bin"))?;
    let desc = serde_json::to_string(params).map_err(|e| Error::Format(e.to_string()))?;
    RunManifest::new("gen-data", seed, format!("{desc} n={n}"), vec!["data.bin".into()]).write(out)?;
    Ok(ds)
}

fn check_matches(cfg: &RunConfig, ds: &Dataset) -> Result<()> {
    let want = cfg.data.params();
    let got = ds.params;
    let same = want.d == got.d
        && want.patches == got.patches
        && want.sigma_p == got.sigma_p
        && want.p == got.p
        && cfg.data.n == ds.len()
        && (want.mu_norm - got.mu_norm).abs() <= 1e-12 * want.mu_norm.max(1.0);
    if same {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "dataset file does not match [data]: file has d={}, P={}, n={}, sigma_p={}, p={}, mu_norm={}",
            got.d,
            got.patches,
            ds.len(),
            got.sigma_p,
            got.p,
            got.mu_norm
        )))
    }
}

/// Train per `cfg` and write a run directory. The dataset is generated from
/// the config seed unless one is supplied.
pub fn train_run(cfg: &RunConfig, data: Option<Dataset>, n_test: usize, out: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let ds = match data {
        Some(ds) => {
            check_matches(cfg, &ds)?;
            ds
        }
        None => gen_dataset(&cfg.data.params(), make_signal(cfg.data.d, cfg.data.mu_norm)?, cfg.data.n, cfg.seed)?,
    };
    let net = cfg.net_config();
    let tc = cfg.train_config();
    std::fs::create_dir_all(out)?;
    let mut outputs = vec![
        "config.toml", "data.bin", "w0.bin", "w.bin", "metrics.csv", "trajectory.json", "checks.csv", "summary.json",
    ];
    if cfg.hooks.track_decomposition {
        outputs.extend(["tracked.json", "coeffs.csv"]);
    }
    RunManifest::new("train", cfg.seed, cfg.to_toml(), outputs.iter().map(|s| s.to_string()).collect())
        .write(out)?;
    write_atomic(&out.join("config.toml"), cfg.to_toml().as_bytes())?;
    save_dataset(&ds, &out.join("data.bin"))?;

    let w0 = init_weights(&net, &mut stream_rng(cfg.seed, &[stream::INIT]))?;
    save_weights(&w0, &out.join("w0.bin"))?;
    let mut tracker = if cfg.hooks.track_decomposition {
        let t = Tracker::new(&ds, &w0, tc.eta, tc.batch_size).record_every(tc.record_every);
        Some(if cfg.hooks.oracle_check { t.with_oracle(Basis::new(&ds)?) } else { t })
    } else {
        None
    };
    let traj = {
        let mut hooks: Vec<&mut dyn TrainHook> = Vec::new();
        if let Some(t) = tracker.as_mut() {
            hooks.push(t);
        }
        train_from(&ds, w0, &tc, &mut hooks)?
    };
    save_weights(&traj.final_weights, &out.join("w.bin"))?;
    write_atomic(&out.join("metrics.csv"), &csv_bytes(|b| traj.write_metrics_csv(b))?)?;
    write_atomic(&out.join("trajectory.json"), &to_json(&traj)?)?;
    let record = tracker.as_ref().map(|t| t.record());
    if let (Some(t), Some(rec)) = (&tracker, &record) {
        write_atomic(&out.join("tracked.json"), &to_json(rec)?)?;
        write_atomic(&out.join("coeffs.csv"), &csv_bytes(|b| t.write_series_csv(b))?)?;
    }
    let rows = trial_checks(&ds, &net, &traj, record.as_ref());
    write_atomic(&out.join("checks.csv"), &csv_bytes(|b| write_report_csv(&rows, b))?)?;

    let (test_error, test_stderr) = if n_test > 0 {
        estimate_test_error(
            &traj.final_weights,
            &ds.params,
            &ds.mu,
            n_test,
            &mut stream_rng(cfg.seed, &[stream::TEST]),
        )?
    } else {
        (f64::NAN, f64::NAN)
    };
    let summary = RunSummary {
        final_train_loss: traj.final_loss(),
        test_error,
        test_stderr,
        n_test,
        sign_violations: record.as_ref().map(|r| r.sign_violations),
        max_oracle_err: record.as_ref().filter(|r| r.oracle_checks > 0).map(|r| r.max_oracle_err),
    };
    write_atomic(&out.join("summary.json"), &to_json(&summary)?)?;
    Ok(summary)
}

pub fn load_config(dir: &Path) -> Result<RunConfig> {
    crate::config::load_toml(&dir.join("config.toml"))
}

pub fn load_trajectory(dir: &Path) -> Result<Trajectory> {
    from_json(&dir.join("trajectory.json"))
}

/// Re-run the checks on a recorded run and rewrite `checks.csv`.
pub fn check_run(dir: &Path) -> Result<Vec<CheckRow>> {
    let cfg = load_config(dir)?;
    let ds = load_dataset(&dir.join("data.bin"))?;
    let traj = load_trajectory(dir)?;
    let tracked_path = dir.join("tracked.json");
    let tracked: Option<TrackedRecord> = if tracked_path.exists() { Some(from_json(&tracked_path)?) } else { None };
    let rows = trial_checks(&ds, &cfg.net_config(), &traj, tracked.as_ref());
    write_atomic(&dir.join("checks.csv"), &csv_bytes(|b| write_report_csv(&rows, b))?)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecomposeSummary {
    pub condition: f64,
    pub relative_residual: f64,
    pub max_abs_gamma: f64,
    pub max_abs_rho: f64,
    /// Largest difference to the tracked coefficients at the end, if tracked.
    pub max_tracked_diff: Option<f64>,
}

/// Solve for the coefficients of the final weights and write
/// `decomposition.csv` (full tensor) into the run directory.
pub fn decompose_run(dir: &Path) -> Result<DecomposeSummary> {
    let ds = load_dataset(&dir.join("data.bin"))?;
    let w0 = load_weights(&dir.join("w0.bin"))?;
    let w = load_weights(&dir.join("w.bin"))?;
    let basis = Basis::new(&ds)?;
    let sol = oracle_solve(&w, &w0, &basis)?;
    let coeffs = sol.to_coeffs();
    let traj_epochs = load_config(dir).map(|c| c.train.epochs).unwrap_or(0);
    write_atomic(
        &dir.join("decomposition.csv"),
        &csv_bytes(|b| write_tensor_csv(b, traj_epochs, 0, &coeffs))?,
    )?;
    let tracked_path = dir.join("tracked.json");
    let max_tracked_diff = if tracked_path.exists() {
        let rec: TrackedRecord = from_json(&tracked_path)?;
        rec.history.last().map(|(_, _, c)| crate::decomposition::compare(c, &sol)).map(|a| a.gamma.max(a.rho))
    } else {
        None
    };
    let abs_max = |it: &mut dyn Iterator<Item = &f64>| it.map(|v| v.abs()).fold(0.0, f64::max);
    Ok(DecomposeSummary {
        condition: basis.condition,
        relative_residual: sol.relative_residual(),
        max_abs_gamma: abs_max(&mut sol.gamma.iter()),
        max_abs_rho: abs_max(&mut sol.rho.iter()),
        max_tracked_diff,
    })
}
