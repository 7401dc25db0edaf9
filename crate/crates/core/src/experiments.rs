//! Phase-diagram grids over `(d, ||mu||)` with Monte Carlo test error.
//!
//! A grid file (TOML) names the axes, seeds and training variants:
//!
//! ```toml
//! base_seed = 0
//! n_test = 1000
//! seeds = [0, 1, 2]
//! d_values = [1000, 5000]
//! mu_values = [1.0, 5.0]
//!
//! [data]
//! P = 2
//! n = 20
//! sigma_p = 1.0
//!
//! [net]
//! m = 10
//! init = "uniform_fan_in"
//!
//! [[variant]]
//! name = "sgd"
//! algo = "sgd"
//! eta = 0.01
//! batch_size = 20
//! epochs = 100
//! ```
//!
//! Outputs: `results.csv` (one row per trial), `heatmap_<variant>.csv` and
//! `heatmap_<variant>.pgm` (seed means), `trials/*.json`, `checks/*.csv`.
//!
//! Every `(d, mu, seed)` cell gets one dataset and one initialization, shared
//! by all variants, so variants are compared on identical draws.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::default_patches;
use crate::data::{gen_dataset, gen_sample, make_signal, DataParams, Dataset};
use crate::decomposition::{TrackedRecord, Tracker};
use crate::error::{invalid, Error, Result};
use crate::network::{sample_output, InitScheme, NetConfig, Weights};
use crate::optim::{train, Algorithm, TrainConfig, Trajectory};
use crate::rng::{derive_seed, stream, stream_rng, Rng};
use crate::theory::{
    activation_threshold, check_coeff_bounds, check_good_batches, check_logit_ratio, check_sam_deactivation,
    check_set_monotonicity, first_stage_epochs, regime_ratio, write_report_csv, CheckRow, CoeffBounds,
    RegimeThresholds, TheoryConstants, DEFAULT_DELTA,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridData {
    #[serde(rename = "P", default = "default_patches")]
    pub patches: usize,
    pub n: usize,
    pub sigma_p: f64,
    #[serde(default)]
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridNet {
    pub m: usize,
    pub init: InitScheme,
    /// Gaussian init only. When absent, `sigma_0_scale / (P sigma_p sqrt(d))` is used.
    #[serde(default)]
    pub sigma_0: Option<f64>,
    #[serde(default = "one")]
    pub sigma_0_scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    pub algo: Algorithm,
    pub eta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub tau: f64,
    #[serde(default)]
    pub sam_until: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub base_seed: u64,
    pub n_test: usize,
    pub seeds: Vec<u64>,
    pub d_values: Vec<usize>,
    pub mu_values: Vec<f64>,
    pub data: GridData,
    pub net: GridNet,
    #[serde(rename = "variant")]
    pub variants: Vec<Variant>,
    /// Run the structural checks on every trial.
    #[serde(default)]
    pub checks: bool,
    /// A trial counts as converged once its training loss reaches this.
    #[serde(default = "default_loss_target")]
    pub loss_target: f64,
    #[serde(default)]
    pub thresholds: Option<RegimeThresholds>,
}

fn default_loss_target() -> f64 {
    0.05
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d_values.is_empty() {
            return Err(invalid("d_values", "need at least one dimension"));
        }
        if self.mu_values.is_empty() {
            return Err(invalid("mu_values", "need at least one signal strength"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "need at least one seed"));
        }
        if self.variants.is_empty() {
            return Err(invalid("variant", "need at least one training variant"));
        }
        let mut names: Vec<&str> = self.variants.iter().map(|v| v.name.as_str()).collect();
        names.sort();
        names.dedup();
        if names.len() != self.variants.len() {
            return Err(invalid("variant.name", "variant names must be unique"));
        }
        for &d in &self.d_values {
            for &mu in &self.mu_values {
                self.params(d, mu).validate()?;
                self.net_config(d).validate()?;
            }
        }
        for v in &self.variants {
            self.train_config(v, 0).validate(self.data.n)?;
        }
        Ok(())
    }

    pub fn params(&self, d: usize, mu_norm: f64) -> DataParams {
        DataParams {
            d,
            patches: self.data.patches,
            sigma_p: self.data.sigma_p,
            p: self.data.p,
            mu_norm,
        }
    }

    pub fn net_config(&self, d: usize) -> NetConfig {
        let sigma_0 = match self.net.sigma_0 {
            Some(s) => s,
            None => {
                self.net.sigma_0_scale / (self.data.patches as f64 * self.data.sigma_p * (d as f64).sqrt())
            }
        };
        NetConfig {
            m: self.net.m,
            d,
            init: self.net.init,
            sigma_0,
        }
    }

    pub fn train_config(&self, v: &Variant, seed: u64) -> TrainConfig {
        TrainConfig {
            eta: v.eta,
            batch_size: v.batch_size,
            epochs: v.epochs,
            algo: v.algo,
            tau: v.tau,
            seed,
            record_every: 0,
            sam_until: v.sam_until,
            record_weights: false,
            record_alignment: self.checks,
            record_sam_probes: self.checks && v.algo == Algorithm::Sam,
        }
    }

    /// All trials in canonical order: `d`, then `mu`, then seed, then variant.
    pub fn cells(&self) -> Vec<TrialCell> {
        let mut out = Vec::new();
        for &d in &self.d_values {
            for &mu_norm in &self.mu_values {
                for &seed in &self.seeds {
                    for v in &self.variants {
                        out.push(TrialCell {
                            d,
                            mu_norm,
                            seed,
                            variant: v.name.clone(),
                        });
                    }
                }
            }
        }
        out
    }

    pub fn variant(&self, name: &str) -> Option<&Variant> {
        self.variants.iter().find(|v| v.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialCell {
    pub d: usize,
    pub mu_norm: f64,
    pub seed: u64,
    pub variant: String,
}

impl TrialCell {
    /// Seed for data, init and shuffles; independent of the variant.
    pub fn trial_seed(&self, base_seed: u64) -> u64 {
        derive_seed(base_seed, &[stream::TRIAL, self.d as u64, self.mu_norm.to_bits(), self.seed])
    }

    pub fn key(&self) -> String {
        format!("d{}_mu{}_s{}_{}", self.d, self.mu_norm, self.seed, self.variant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub cell: TrialCell,
    pub algo: Algorithm,
    /// `None` on success, otherwise the error message.
    pub failure: Option<String>,
    #[serde(deserialize_with = "crate::io::nullable_f64")]
    pub final_train_loss: f64,
    #[serde(deserialize_with = "crate::io::nullable_f64")]
    pub test_error: f64,
    #[serde(deserialize_with = "crate::io::nullable_f64")]
    pub test_stderr: f64,
    /// First recorded iteration with training loss at or below the target.
    pub converged_at: Option<usize>,
    #[serde(deserialize_with = "crate::io::nullable_f64")]
    pub max_gamma: f64,
    #[serde(deserialize_with = "crate::io::nullable_f64")]
    pub max_sum_zeta: f64,
    pub sign_violations: usize,
    pub ordering_violations: usize,
    #[serde(deserialize_with = "crate::io::nullable_f64")]
    pub monotonicity_fraction: f64,
    #[serde(deserialize_with = "crate::io::nullable_f64")]
    pub max_logit_ratio: f64,
    #[serde(default)]
    pub checks: Vec<CheckRow>,
}

impl TrialResult {
    pub fn ok(&self) -> bool {
        self.failure.is_none()
    }
}

/// Fraction of `n_test` fresh samples with `y f(W, x) <= 0`, and its
/// binomial standard error `sqrt(r (1 - r) / n_test)`.
pub fn estimate_test_error(
    w: &Weights,
    params: &DataParams,
    mu: &Array1<f64>,
    n_test: usize,
    rng: &mut Rng,
) -> Result<(f64, f64)> {
    if n_test == 0 {
        return Err(invalid("n_test", "need at least one test sample"));
    }
    if w.d() != params.d || mu.len() != params.d {
        return Err(Error::DimensionMismatch {
            expected: params.d,
            got: w.d(),
            context: "weights vs test data dimension",
        });
    }
    let mut errors = 0usize;
    for _ in 0..n_test {
        let s = gen_sample(params, rng);
        if s.y.sign() * sample_output(w, mu, params.patches, &s) <= 0.0 {
            errors += 1;
        }
    }
    let r = errors as f64 / n_test as f64;
    Ok((r, (r * (1.0 - r) / n_test as f64).sqrt()))
}

/// Largest tolerated absolute tracker/oracle coefficient difference.
pub const ORACLE_TOL: f64 = 1e-8;

/// Structural checks for one finished run.
pub fn trial_checks(ds: &Dataset, net: &NetConfig, traj: &Trajectory, tracked: Option<&TrackedRecord>) -> Vec<CheckRow> {
    let cfg = &traj.config;
    let mut rows = Vec::new();
    let threshold = activation_threshold(net.init_std(), ds.params.sigma_p, ds.d());
    let mono = check_set_monotonicity(traj, threshold);
    rows.push(CheckRow {
        check: "set_ordering".into(),
        window: "all".into(),
        violations: mono.ordering_violations,
        total: mono.snapshots_used,
        worst_case_value: 0.0,
    });
    rows.push(CheckRow {
        check: "set_monotonicity".into(),
        window: "all".into(),
        violations: mono.violations,
        total: mono.comparisons,
        worst_case_value: mono.violation_fraction(),
    });
    let lr = check_logit_ratio(traj);
    rows.push(CheckRow {
        check: "logit_ratio".into(),
        window: "all".into(),
        violations: lr.exceedances,
        total: lr.per_epoch.len(),
        worst_case_value: lr.max_ratio,
    });
    if let Some(tr) = tracked {
        rows.push(CheckRow {
            check: "coeff_sign_pattern".into(),
            window: "all".into(),
            violations: tr.sign_violations,
            total: tr.steps,
            worst_case_value: 0.0,
        });
        let consts = TheoryConstants::from_run(ds, &traj.initial, cfg.epochs, DEFAULT_DELTA);
        let (bounds, window, lim) = match cfg.algo {
            Algorithm::Sgd => (CoeffBounds::sgd(&consts, ds.len(), ds.d()), "all".to_string(), None),
            Algorithm::Sam => {
                let t1 = first_stage_epochs(net.m, cfg.batch_size, ds.len(), cfg.eta, ds.params.mu_norm);
                (
                    CoeffBounds::sam_first_stage(&consts, ds.len(), ds.d()),
                    format!("t<={t1:.3}"),
                    Some(t1),
                )
            }
        };
        let cb = check_coeff_bounds(&tr.history, &bounds, lim);
        rows.push(CheckRow {
            check: "coeff_bounds".into(),
            window,
            violations: cb.violating_snapshots,
            total: cb.checked,
            worst_case_value: cb.c_prime,
        });
        if tr.oracle_checks > 0 {
            rows.push(CheckRow {
                check: "tracker_vs_oracle".into(),
                window: "recorded".into(),
                violations: usize::from(!(tr.max_oracle_err <= ORACLE_TOL)),
                total: tr.oracle_checks,
                worst_case_value: tr.max_oracle_err,
            });
        }
    }
    if cfg.algo == Algorithm::Sam && !traj.sam_records.is_empty() {
        let t1 = first_stage_epochs(net.m, cfg.batch_size, ds.len(), cfg.eta, ds.params.mu_norm);
        let dr = check_sam_deactivation(&traj.sam_records, t1);
        rows.push(CheckRow {
            check: "sam_deactivation".into(),
            window: format!("t<={t1:.3}"),
            violations: dr.violations,
            total: dr.events,
            worst_case_value: dr.violation_rate(),
        });
    }
    let gb = check_good_batches(&traj.schedule, ds);
    let bad_epochs = gb.per_epoch.iter().filter(|f| f[0] < 0.5 || f[1] < 0.5).count();
    rows.push(CheckRow {
        check: "good_batches".into(),
        window: "all".into(),
        violations: bad_epochs,
        total: gb.per_epoch.len(),
        worst_case_value: gb.min_fraction[0].min(gb.min_fraction[1]),
    });
    rows
}

fn failed(cell: &TrialCell, algo: Algorithm, e: &Error) -> TrialResult {
    TrialResult {
        cell: cell.clone(),
        algo,
        failure: Some(e.to_string()),
        final_train_loss: f64::NAN,
        test_error: f64::NAN,
        test_stderr: f64::NAN,
        converged_at: None,
        max_gamma: f64::NAN,
        max_sum_zeta: f64::NAN,
        sign_violations: 0,
        ordering_violations: 0,
        monotonicity_fraction: f64::NAN,
        max_logit_ratio: f64::NAN,
        checks: Vec::new(),
    }
}

/// Train one cell and measure it. Numerical blow-ups become a failed result
/// rather than an error; configuration errors are returned.
pub fn run_trial(spec: &GridSpec, cell: &TrialCell) -> Result<TrialResult> {
    let v = spec
        .variant(&cell.variant)
        .ok_or_else(|| invalid("variant", format!("unknown variant {:?}", cell.variant)))?;
    let seed = cell.trial_seed(spec.base_seed);
    let params = spec.params(cell.d, cell.mu_norm);
    let ds = gen_dataset(&params, make_signal(cell.d, cell.mu_norm)?, spec.data.n, seed)?;
    let net = spec.net_config(cell.d);
    let cfg = spec.train_config(v, seed);
    cfg.validate(ds.len())?;

    let w0 = crate::network::init_weights(&net, &mut stream_rng(seed, &[stream::INIT]))?;
    let mut tracker = Tracker::new(&ds, &w0, cfg.eta, cfg.batch_size);
    let outcome = {
        let mut hooks: Vec<&mut dyn crate::optim::TrainHook> = Vec::new();
        hooks.push(&mut tracker);
        train(&ds, &net, &cfg, &mut hooks)
    };
    let traj = match outcome {
        Ok(t) => t,
        Err(e @ Error::NonFinite { .. }) => return Ok(failed(cell, v.algo, &e)),
        Err(e) => return Err(e),
    };

    let (test_error, test_stderr) = estimate_test_error(
        &traj.final_weights,
        &params,
        &ds.mu,
        spec.n_test,
        &mut stream_rng(seed, &[stream::TEST]),
    )?;
    let converged_at = traj
        .snapshots
        .iter()
        .find(|s| s.train_loss <= spec.loss_target)
        .map(|s| s.global);
    let c = &tracker.coeffs;
    let max_gamma = c.gamma.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let max_sum_zeta = c
        .zeta
        .outer_iter()
        .flat_map(|jr| jr.outer_iter().map(|z| z.sum()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    let (checks, ordering_violations, monotonicity_fraction, max_logit_ratio) = if spec.checks {
        let rows = trial_checks(&ds, &net, &traj, Some(&tracker.record()));
        let get = |name: &str| rows.iter().find(|r| r.check == name).cloned();
        let ord = get("set_ordering").map_or(0, |r| r.violations);
        let mono = get("set_monotonicity").map_or(0.0, |r| r.worst_case_value);
        let lr = get("logit_ratio").map_or(f64::NAN, |r| r.worst_case_value);
        (rows, ord, mono, lr)
    } else {
        (Vec::new(), 0, f64::NAN, check_logit_ratio(&traj).max_ratio)
    };
    Ok(TrialResult {
        cell: cell.clone(),
        algo: v.algo,
        failure: None,
        final_train_loss: traj.final_loss(),
        test_error,
        test_stderr,
        converged_at,
        max_gamma,
        max_sum_zeta,
        sign_violations: tracker.sign_violations,
        ordering_violations,
        monotonicity_fraction,
        max_logit_ratio,
        checks,
    })
}

/// Grid runner options.
#[derive(Debug, Clone, Default)]
pub struct GridOptions {
    /// Where `trials/`, `checks/`, `results.csv` and heatmaps go; nothing is
    /// written when `None`.
    pub out_dir: Option<PathBuf>,
    /// Reuse finished trials found under `out_dir/trials`.
    pub resume: bool,
    /// Worker threads; 0 uses the rayon default.
    pub jobs: usize,
}

/// Run every trial of the grid. Results come back in canonical cell order
/// regardless of scheduling.
pub fn run_grid(spec: &GridSpec, opts: &GridOptions) -> Result<Vec<TrialResult>> {
    spec.validate()?;
    let cells = spec.cells();
    let trial_dir = opts.out_dir.as_ref().map(|d| d.join("trials"));
    let check_dir = opts.out_dir.as_ref().map(|d| d.join("checks"));
    for dir in trial_dir.iter().chain(check_dir.iter().filter(|_| spec.checks)) {
        std::fs::create_dir_all(dir)?;
    }
    let work = |cell: &TrialCell| -> Result<TrialResult> {
        let path = trial_dir.as_ref().map(|d| d.join(format!("{}.json", cell.key())));
        if opts.resume {
            if let Some(p) = path.as_ref().filter(|p| p.exists()) {
                let text = std::fs::read_to_string(p)?;
                if let Ok(r) = serde_json::from_str::<TrialResult>(&text) {
                    if &r.cell == cell {
                        return Ok(r);
                    }
                }
            }
        }
        let r = run_trial(spec, cell)?;
        if let Some(p) = &path {
            let json = serde_json::to_string(&r).map_err(|e| Error::Format(e.to_string()))?;
            crate::io::write_atomic(p, json.as_bytes())?;
        }
        if let (Some(dir), true) = (&check_dir, spec.checks) {
            let mut buf = Vec::new();
            write_report_csv(&r.checks, &mut buf)?;
            crate::io::write_atomic(&dir.join(format!("{}.csv", cell.key())), &buf)?;
        }
        Ok(r)
    };
    let results: Vec<Result<TrialResult>> = if opts.jobs == 1 {
        cells.iter().map(work).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| cells.par_iter().map(work).collect())
    };
    let results: Vec<TrialResult> = results.into_iter().collect::<Result<_>>()?;

    if let Some(dir) = &opts.out_dir {
        let mut buf = Vec::new();
        write_results_csv(&results, &mut buf)?;
        crate::io::write_atomic(&dir.join("results.csv"), &buf)?;
        let table = aggregate(spec, &results);
        let names: Vec<String> = spec.variants.iter().map(|v| v.name.clone()).collect();
        export_heatmap(&table, &names, &spec.d_values, &spec.mu_values, dir)?;
    }
    Ok(results)
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

/// One row per trial, canonical order.
pub fn write_results_csv<W: Write>(results: &[TrialResult], mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "d,mu_norm,seed,variant,algo,status,final_train_loss,test_error,test_stderr,converged_at,max_gamma,max_sum_zeta,sign_violations,ordering_violations,monotonicity_fraction,max_logit_ratio"
    )?;
    for r in results {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.cell.d,
            r.cell.mu_norm,
            r.cell.seed,
            r.cell.variant,
            r.algo,
            if r.ok() { "ok" } else { "failed" },
            r.final_train_loss,
            r.test_error,
            r.test_stderr,
            opt(r.converged_at),
            r.max_gamma,
            r.max_sum_zeta,
            r.sign_violations,
            r.ordering_violations,
            r.monotonicity_fraction,
            r.max_logit_ratio
        )?;
    }
    Ok(())
}

/// Seed-averaged test error of one `(d, mu, variant)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub d: usize,
    pub mu_norm: f64,
    pub algo: String,
    pub mean_test_error: f64,
    /// Standard error of the mean across seeds; 0 with a single seed.
    pub stderr: f64,
    pub n_seeds: usize,
}

/// Average successful trials per `(d, mu, variant)`. Cells where every seed
/// failed are left out.
pub fn aggregate(spec: &GridSpec, results: &[TrialResult]) -> Vec<HeatmapRow> {
    let mut groups: BTreeMap<(usize, usize, usize), Vec<f64>> = BTreeMap::new();
    for r in results.iter().filter(|r| r.ok()) {
        let di = spec.d_values.iter().position(|&d| d == r.cell.d);
        let mi = spec.mu_values.iter().position(|&m| m == r.cell.mu_norm);
        let vi = spec.variants.iter().position(|v| v.name == r.cell.variant);
        if let (Some(di), Some(mi), Some(vi)) = (di, mi, vi) {
            groups.entry((vi, di, mi)).or_default().push(r.test_error);
        }
    }
    groups
        .into_iter()
        .map(|((vi, di, mi), errs)| {
            let k = errs.len() as f64;
            let mean = errs.iter().sum::<f64>() / k;
            let stderr = if errs.len() > 1 {
                let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1.0);
                (var / k).sqrt()
            } else {
                0.0
            };
            HeatmapRow {
                d: spec.d_values[di],
                mu_norm: spec.mu_values[mi],
                algo: spec.variants[vi].name.clone(),
                mean_test_error: mean,
                stderr,
                n_seeds: errs.len(),
            }
        })
        .collect()
}

pub fn write_heatmap_csv<W: Write>(rows: &[HeatmapRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "d,mu_norm,algo,mean_test_error,stderr,n_seeds")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.d, r.mu_norm, r.algo, r.mean_test_error, r.stderr, r.n_seeds
        )?;
    }
    Ok(())
}

/// Pixels per grid cell side in the rendered image.
pub const CELL_PIXELS: usize = 16;

/// Plain (ASCII, `P2`) graymap of one variant. Columns follow `mu_values`
/// left to right, rows follow `d_values` bottom to top. Each cell is a
/// `CELL_PIXELS` square with intensity `1 + round(254 (1 - e))` for mean test
/// error `e` clamped to `[0, 1]`: white is error 0, near-black is error 1.
/// Cells without data are 0.
pub fn render_pgm(rows: &[HeatmapRow], algo: &str, d_values: &[usize], mu_values: &[f64]) -> String {
    let (w, h) = (mu_values.len() * CELL_PIXELS, d_values.len() * CELL_PIXELS);
    let mut cell = vec![vec![0u8; mu_values.len()]; d_values.len()];
    for r in rows.iter().filter(|r| r.algo == algo) {
        let di = d_values.iter().position(|&d| d == r.d);
        let mi = mu_values.iter().position(|&m| m == r.mu_norm);
        if let (Some(di), Some(mi)) = (di, mi) {
            cell[di][mi] = intensity(r.mean_test_error);
        }
    }
    let mut s = format!("P2\n{w} {h}\n255\n");
    for py in 0..h {
        let di = d_values.len() - 1 - py / CELL_PIXELS;
        let line: Vec<String> = (0..w).map(|px| cell[di][px / CELL_PIXELS].to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn intensity(err: f64) -> u8 {
    let e = if err.is_nan() { 1.0 } else { err.clamp(0.0, 1.0) };
    1 + (254.0 * (1.0 - e)).round() as u8
}

/// Write `heatmap_<algo>.csv` and `heatmap_<algo>.pgm` for each name in
/// `algos`. An algo without rows gets a header-only CSV and no image.
pub fn export_heatmap(
    rows: &[HeatmapRow],
    algos: &[String],
    d_values: &[usize],
    mu_values: &[f64],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for a in algos {
        let mine: Vec<HeatmapRow> = rows.iter().filter(|r| &r.algo == a).cloned().collect();
        let mut buf = Vec::new();
        write_heatmap_csv(&mine, &mut buf)?;
        let csv = dir.join(format!("heatmap_{a}.csv"));
        crate::io::write_atomic(&csv, &buf)?;
        written.push(csv);
        if !mine.is_empty() {
            let p = dir.join(format!("heatmap_{a}.pgm"));
            crate::io::write_atomic(&p, render_pgm(&mine, a, d_values, mu_values).as_bytes())?;
            written.push(p);
        }
    }
    Ok(written)
}

/// `(regime ratio, mean test error)` for every aggregated cell of `variant`.
pub fn regime_points(spec: &GridSpec, rows: &[HeatmapRow], variant: &str) -> Vec<(f64, f64)> {
    rows.iter()
        .filter(|r| r.algo == variant)
        .map(|r| {
            (
                regime_ratio(spec.data.n, r.mu_norm, r.d, spec.data.patches, spec.data.sigma_p),
                r.mean_test_error,
            )
        })
        .collect()
}

/// Fit the regime cut-offs to a measured grid.
pub fn calibrate_from_grid(
    spec: &GridSpec,
    rows: &[HeatmapRow],
    variant: &str,
    benign_err: f64,
    harmful_err: f64,
) -> RegimeThresholds {
    crate::theory::calibrate_thresholds(&regime_points(spec, rows, variant), benign_err, harmful_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> GridSpec {
        crate::config::parse_toml(
            r#"
n_test = 200
seeds = [0, 1]
d_values = [60, 120]
mu_values = [0.5, 6.0]
checks = true
[data]
n = 8
sigma_p = 1.0
[net]
m = 3
init = "uniform_fan_in"
[[variant]]
name = "sgd"
algo = "sgd"
eta = 0.1
batch_size = 4
epochs = 5
[[variant]]
name = "sam"
algo = "sam"
eta = 0.1
batch_size = 4
epochs = 5
tau = 0.05
"#,
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_always_err() {
        let p = DataParams { d: 5, patches: 2, sigma_p: 1.0, p: 0.0, mu_norm: 1.0 };
        let mu = make_signal(5, 1.0).unwrap();
        let (r, se) = estimate_test_error(&Weights::zeros(2, 5), &p, &mu, 50, &mut stream_rng(0, &[])).unwrap();
        assert_eq!((r, se), (1.0, 0.0));
    }

    #[test]
    fn signal_aligned_filter_is_perfect_without_noise() {
        let p = DataParams { d: 4, patches: 2, sigma_p: 0.0, p: 0.0, mu_norm: 2.0 };
        let mu = make_signal(4, 2.0).unwrap();
        let mut w = Weights::zeros(1, 4);
        w.w[[0, 0]] = 1.0;
        w.w[[1, 0]] = -1.0;
        let (r, _) = estimate_test_error(&w, &p, &mu, 100, &mut stream_rng(1, &[])).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn variants_share_data_and_init() {
        let s = tiny_spec();
        let cells = s.cells();
        assert_eq!(cells.len(), 2 * 2 * 2 * 2);
        assert_eq!(cells[0].trial_seed(0), cells[1].trial_seed(0));
        assert_ne!(cells[0].trial_seed(0), cells[2].trial_seed(0));
    }

    #[test]
    fn grid_is_deterministic_and_parallel_safe() {
        let s = tiny_spec();
        let a = run_grid(&s, &GridOptions { jobs: 1, ..Default::default() }).unwrap();
        let b = run_grid(&s, &GridOptions { jobs: 3, ..Default::default() }).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|r| r.ok() && r.sign_violations == 0 && r.ordering_violations == 0));
    }

    #[test]
    fn empty_table_gives_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let files = export_heatmap(&[], &["sgd".to_string()], &[10], &[1.0], dir.path()).unwrap();
        assert_eq!(files.len(), 1);
        let text = std::fs::read_to_string(&files[0]).unwrap();
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn intensity_is_monotone() {
        assert_eq!(intensity(0.0), 255);
        assert_eq!(intensity(1.0), 1);
        assert!(intensity(0.1) > intensity(0.2));
    }
}
