//! Empirical checks of the structural facts behind the training analysis.
//!
//! Definitional facts (threshold ordering of the activation sets, coefficient
//! signs) are counted as hard violations. Statements that only hold with high
//! probability under the scaling assumptions are reported as fractions and
//! worst-case values; callers choose the tolerance.

use std::io::Write;

use serde::Serialize;

use crate::data::{Dataset, Label};
use crate::decomposition::Coeffs;
use crate::network::{loss_grad, Weights};
use crate::optim::{SamStepRecord, Trajectory};

/// Logit-ratio constant `C_1`; the ratio bound is `exp(C_1)`.
pub const LOGIT_C1: f64 = 5.0;
pub const KAPPA: f64 = 10.0;
pub const DEFAULT_DELTA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryConstants {
    pub t_star: f64,
    /// `4 log(T*)`.
    pub alpha: f64,
    /// `2 max_{i,j,r} { |<w0_{j,r}, mu>|, (P-1) |<w0_{j,r}, xi_i>| }`.
    pub beta: f64,
    /// `||mu|| / ((P-1) sigma_p sqrt(d))`.
    pub snr: f64,
    /// `n * snr^2`.
    pub gamma_hat: f64,
    pub kappa: f64,
    pub c1_logit: f64,
    pub delta: f64,
}

impl TheoryConstants {
    pub fn from_run(ds: &Dataset, w0: &Weights, t_star: usize, delta: f64) -> Self {
        let pm1 = (ds.params.patches - 1) as f64;
        let mut beta = 0.0f64;
        for row in 0..w0.w.nrows() {
            let f = w0.w.row(row);
            beta = beta.max(f.dot(&ds.mu).abs());
            for s in &ds.samples {
                beta = beta.max(pm1 * f.dot(&s.xi).abs());
            }
        }
        let t_star = (t_star.max(1)) as f64;
        let mu_norm = ds.mu_norm_sq().sqrt();
        let snr = mu_norm / (pm1 * ds.params.sigma_p * (ds.d() as f64).sqrt());
        TheoryConstants {
            t_star,
            alpha: 4.0 * t_star.ln(),
            beta: 2.0 * beta,
            snr,
            gamma_hat: ds.len() as f64 * snr * snr,
            kappa: KAPPA,
            c1_logit: LOGIT_C1,
            delta,
        }
    }

    pub fn logit_ratio_bound(&self) -> f64 {
        self.c1_logit.exp()
    }
}

/// `sigma_0 * sigma_p * sqrt(d) / sqrt(2)`.
pub fn activation_threshold(sigma_0: f64, sigma_p: f64, d: usize) -> f64 {
    sigma_0 * sigma_p * (d as f64).sqrt() / 2f64.sqrt()
}

/// Activation sets at one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSets {
    /// `S_i`: filters `r` with `<w_{y_i,r}, xi_i>` above the threshold.
    pub strong: Vec<Vec<bool>>,
    /// `S~_i`: filters with positive alignment.
    pub positive: Vec<Vec<bool>>,
}

impl ActivationSets {
    /// From the `(n, m)` self-alignment matrix of a snapshot.
    pub fn from_alignment(alignment: &ndarray::Array2<f64>, threshold: f64) -> Self {
        let (n, m) = alignment.dim();
        let strong = (0..n).map(|i| (0..m).map(|r| alignment[[i, r]] > threshold).collect()).collect();
        let positive = (0..n).map(|i| (0..m).map(|r| alignment[[i, r]] > 0.0).collect()).collect();
        ActivationSets { strong, positive }
    }

    /// `S_{j,r}`: samples with label `j` whose noise strongly activates filter `r`.
    pub fn per_filter(&self, labels: &[Label], j: Label, r: usize) -> Vec<usize> {
        labels
            .iter()
            .enumerate()
            .filter(|&(i, &y)| y == j && self.strong[i][r])
            .map(|(i, _)| i)
            .collect()
    }

    /// Samples whose `S_i` is not contained in `S~_i`.
    pub fn ordering_violations(&self) -> usize {
        self.strong
            .iter()
            .zip(&self.positive)
            .filter(|(s, p)| !subset(s, p))
            .count()
    }
}

fn subset(a: &[bool], b: &[bool]) -> bool {
    a.iter().zip(b).all(|(&x, &y)| !x || y)
}

/// One line of the structured check report.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct CheckRow {
    pub check: String,
    pub window: String,
    pub violations: usize,
    pub total: usize,
    #[serde(deserialize_with = "crate::io::nullable_f64")]
    pub worst_case_value: f64,
}

pub fn write_report_csv<W: Write>(rows: &[CheckRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "check,window,violations,total,worst_case_value")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:e}",
            r.check, r.window, r.violations, r.total, r.worst_case_value
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub comparisons: usize,
    pub violations: usize,
    /// Hard violations of `S_i ⊆ S~_i`; always zero for a nonnegative threshold.
    pub ordering_violations: usize,
    pub snapshots_used: usize,
}

impl MonotonicityReport {
    pub fn violation_fraction(&self) -> f64 {
        if self.comparisons == 0 {
            0.0
        } else {
            self.violations as f64 / self.comparisons as f64
        }
    }
}

/// Compare `S_i^{(t-1,0)} ⊆ S_i^{(t,0)}` across consecutive epochs and
/// `S_i^{(t,0)} ⊆ S~_i^{(t,b)}` for every recorded `b` inside epoch `t`.
pub fn check_set_monotonicity(traj: &Trajectory, threshold: f64) -> MonotonicityReport {
    let sets: Vec<(usize, usize, ActivationSets)> = traj
        .snapshots
        .iter()
        .filter_map(|s| {
            s.alignment
                .as_ref()
                .map(|a| (s.epoch, s.batch, ActivationSets::from_alignment(a, threshold)))
        })
        .collect();
    let mut rep = MonotonicityReport {
        comparisons: 0,
        violations: 0,
        ordering_violations: sets.iter().map(|(_, _, s)| s.ordering_violations()).sum(),
        snapshots_used: sets.len(),
    };
    let boundaries: Vec<&(usize, usize, ActivationSets)> = sets.iter().filter(|(_, b, _)| *b == 0).collect();
    for pair in boundaries.windows(2) {
        let (prev, next) = (&pair[0].2, &pair[1].2);
        for (a, b) in prev.strong.iter().zip(&next.strong) {
            rep.comparisons += 1;
            if !subset(a, b) {
                rep.violations += 1;
            }
        }
    }
    for (t, _, base) in &boundaries {
        for (_, _, inner) in sets.iter().filter(|(e, b, _)| e == t && *b > 0) {
            for (a, b) in base.strong.iter().zip(&inner.positive) {
                rep.comparisons += 1;
                if !subset(a, b) {
                    rep.violations += 1;
                }
            }
        }
    }
    rep
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogitRatioReport {
    /// `(epoch, max_{i,k,b1,b2} l'_i / l'_k)` over the snapshots of that epoch.
    pub per_epoch: Vec<(usize, f64)>,
    pub max_ratio: f64,
    pub bound: f64,
    pub exceedances: usize,
}

pub fn check_logit_ratio(traj: &Trajectory) -> LogitRatioReport {
    let bound = LOGIT_C1.exp();
    let mut per_epoch: Vec<(usize, f64, f64)> = Vec::new();
    for s in &traj.snapshots {
        let mags = s.margins.iter().map(|&z| -loss_grad(z));
        let (lo, hi) = mags.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
        match per_epoch.last_mut() {
            Some(last) if last.0 == s.epoch => {
                last.1 = last.1.min(lo);
                last.2 = last.2.max(hi);
            }
            _ => per_epoch.push((s.epoch, lo, hi)),
        }
    }
    let per_epoch: Vec<(usize, f64)> = per_epoch
        .into_iter()
        .map(|(t, lo, hi)| (t, if hi == lo { 1.0 } else { hi / lo }))
        .collect();
    let max_ratio = per_epoch.iter().map(|p| p.1).fold(1.0, f64::max);
    let exceedances = per_epoch.iter().filter(|p| !(p.1 <= bound)).count();
    LogitRatioReport {
        per_epoch,
        max_ratio,
        bound,
        exceedances,
    }
}

/// Admissible coefficient ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoeffBounds {
    pub zeta_max: f64,
    pub omega_min: f64,
    pub gamma_min: f64,
    /// Normalizer for the reported empirical `C' = max gamma / (gamma_hat alpha)`.
    pub gamma_scale: f64,
}

impl CoeffBounds {
    /// `0 <= zeta <= alpha`, `omega >= -beta - 10 sqrt(log(6n^2/delta)/d) n alpha`,
    /// `gamma >= -1/12`.
    pub fn sgd(c: &TheoryConstants, n: usize, d: usize) -> Self {
        let slack = 10.0 * ((6.0 * (n * n) as f64 / c.delta).ln() / d as f64).sqrt() * n as f64;
        CoeffBounds {
            zeta_max: c.alpha,
            omega_min: -c.beta - slack * c.alpha,
            gamma_min: -1.0 / 12.0,
            gamma_scale: c.gamma_hat * c.alpha,
        }
    }

    /// First SAM stage: `0 <= zeta <= 1/12`, `omega >= -beta - 10 sqrt(log(6n^2/delta)/d) n`.
    pub fn sam_first_stage(c: &TheoryConstants, n: usize, d: usize) -> Self {
        let slack = 10.0 * ((6.0 * (n * n) as f64 / c.delta).ln() / d as f64).sqrt() * n as f64;
        CoeffBounds {
            zeta_max: 1.0 / 12.0,
            omega_min: -c.beta - slack,
            gamma_min: 0.0,
            gamma_scale: c.gamma_hat * c.alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoeffBoundsReport {
    pub checked: usize,
    /// Checked snapshots with at least one out-of-range entry.
    pub violating_snapshots: usize,
    pub zeta_violations: usize,
    pub omega_violations: usize,
    pub gamma_violations: usize,
    pub max_zeta: f64,
    pub min_omega: f64,
    pub min_gamma: f64,
    pub max_gamma: f64,
    /// Empirical `max gamma / (gamma_hat * alpha)`.
    pub c_prime: f64,
}

impl CoeffBoundsReport {
    pub fn violations(&self) -> usize {
        self.zeta_violations + self.omega_violations + self.gamma_violations
    }
}

/// Check a coefficient series; entries past `max_epoch` (if given) are skipped.
pub fn check_coeff_bounds(
    history: &[(usize, usize, Coeffs)],
    bounds: &CoeffBounds,
    max_epoch: Option<f64>,
) -> CoeffBoundsReport {
    let mut rep = CoeffBoundsReport {
        checked: 0,
        violating_snapshots: 0,
        zeta_violations: 0,
        omega_violations: 0,
        gamma_violations: 0,
        max_zeta: 0.0,
        min_omega: 0.0,
        min_gamma: 0.0,
        max_gamma: 0.0,
        c_prime: 0.0,
    };
    for (t, _, c) in history {
        if max_epoch.is_some_and(|lim| *t as f64 > lim) {
            continue;
        }
        rep.checked += 1;
        let before = rep.violations();
        for &z in c.zeta.iter() {
            rep.max_zeta = rep.max_zeta.max(z);
            if z < 0.0 || z > bounds.zeta_max {
                rep.zeta_violations += 1;
            }
        }
        for &o in c.omega.iter() {
            rep.min_omega = rep.min_omega.min(o);
            if o > 0.0 || o < bounds.omega_min {
                rep.omega_violations += 1;
            }
        }
        for &g in c.gamma.iter() {
            rep.min_gamma = rep.min_gamma.min(g);
            rep.max_gamma = rep.max_gamma.max(g);
            if g < bounds.gamma_min {
                rep.gamma_violations += 1;
            }
        }
        if rep.violations() > before {
            rep.violating_snapshots += 1;
        }
    }
    if bounds.gamma_scale > 0.0 {
        rep.c_prime = rep.max_gamma / bounds.gamma_scale;
    }
    rep
}

/// Length of the first SAM stage in epochs: `m B / (12 n eta ||mu||^2)`.
pub fn first_stage_epochs(m: usize, batch: usize, n: usize, eta: f64, mu_norm: f64) -> f64 {
    (m * batch) as f64 / (12.0 * n as f64 * eta * mu_norm * mu_norm)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeactivationReport {
    /// Steps inside the window.
    pub steps: usize,
    /// Events with `<w_{y_k,r}, xi_k> >= 0` for `k` in the batch.
    pub events: usize,
    /// Events where the perturbed inner product stays `>= 0`.
    pub violations: usize,
    /// Largest perturbed inner product among the events.
    pub worst_after: f64,
    /// True when no step moved any inner product, i.e. there was no
    /// perturbation and the premise of the check is absent.
    pub perturbation_free: bool,
}

impl DeactivationReport {
    pub fn violation_rate(&self) -> f64 {
        if self.events == 0 {
            0.0
        } else {
            self.violations as f64 / self.events as f64
        }
    }
}

pub fn check_sam_deactivation(records: &[SamStepRecord], window_epochs: f64) -> DeactivationReport {
    let mut rep = DeactivationReport {
        steps: 0,
        events: 0,
        violations: 0,
        worst_after: f64::NEG_INFINITY,
        perturbation_free: true,
    };
    for rec in records.iter().filter(|r| r.epoch as f64 <= window_epochs) {
        rep.steps += 1;
        for p in &rec.probes {
            if p.after != p.before {
                rep.perturbation_free = false;
            }
            if p.before >= 0.0 {
                rep.events += 1;
                rep.worst_after = rep.worst_after.max(p.after);
                if p.after >= 0.0 {
                    rep.violations += 1;
                }
            }
        }
    }
    rep
}

/// Smallest `c` in `[lo, hi]` with `violations(c) == 0`, found by bisection
/// assuming violations are non-increasing in `c`. `None` if `hi` still fails.
pub fn calibrate_min_constant<F>(mut violations: F, lo: f64, hi: f64, iters: usize) -> Option<f64>
where
    F: FnMut(f64) -> usize,
{
    if violations(hi) > 0 {
        return None;
    }
    let (mut lo, mut hi) = (lo, hi);
    if violations(lo) == 0 {
        return Some(lo);
    }
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if violations(mid) == 0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoodBatchReport {
    /// Per epoch, fraction of batches that are good for `y = +1` and `y = -1`.
    pub per_epoch: Vec<[f64; 2]>,
    pub mean_fraction: [f64; 2],
    pub min_fraction: [f64; 2],
}

/// A batch is good for `y` when the number of clean samples with label `y`
/// in it lies in `[B/4, 3B/4]`.
pub fn check_good_batches(schedule: &[Vec<Vec<usize>>], ds: &Dataset) -> GoodBatchReport {
    let mut per_epoch = Vec::with_capacity(schedule.len());
    for batches in schedule {
        let mut good = [0usize; 2];
        for batch in batches {
            let b = batch.len() as f64;
            for y in Label::BOTH {
                let count = batch
                    .iter()
                    .filter(|&&i| ds.samples[i].y == y && ds.samples[i].is_clean())
                    .count() as f64;
                if count >= b / 4.0 && count <= 3.0 * b / 4.0 {
                    good[y.index()] += 1;
                }
            }
        }
        let h = batches.len().max(1) as f64;
        per_epoch.push([good[0] as f64 / h, good[1] as f64 / h]);
    }
    let epochs = per_epoch.len().max(1) as f64;
    let mut mean_fraction = [0.0; 2];
    let mut min_fraction = [f64::INFINITY; 2];
    for f in &per_epoch {
        for y in 0..2 {
            mean_fraction[y] += f[y] / epochs;
            min_fraction[y] = min_fraction[y].min(f[y]);
        }
    }
    if per_epoch.is_empty() {
        min_fraction = [0.0; 2];
    }
    GoodBatchReport {
        per_epoch,
        mean_fraction,
        min_fraction,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Benign,
    Harmful,
    Indeterminate,
}

/// Cut-offs on `n ||mu||^4 / (d P^4 sigma_p^4)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct RegimeThresholds {
    pub c_lo: f64,
    pub c_hi: f64,
}

impl Default for RegimeThresholds {
    /// Calibrated against the full-batch synthetic grid (n = 20, P = 2,
    /// sigma_p = 1, 100 steps at eta = 0.01): every cell with ratio at least
    /// 1.0 measured test error <= 0.05, every cell at most 0.15 measured >= 0.2.
    fn default() -> Self {
        RegimeThresholds { c_lo: 0.15, c_hi: 1.0 }
    }
}

pub fn regime_ratio(n: usize, mu_norm: f64, d: usize, patches: usize, sigma_p: f64) -> f64 {
    n as f64 * mu_norm.powi(4) / (d as f64 * (patches as f64).powi(4) * sigma_p.powi(4))
}

pub fn classify_regime(
    n: usize,
    mu_norm: f64,
    d: usize,
    patches: usize,
    sigma_p: f64,
    thresholds: &RegimeThresholds,
) -> Regime {
    let r = regime_ratio(n, mu_norm, d, patches, sigma_p);
    if r >= thresholds.c_hi {
        Regime::Benign
    } else if r <= thresholds.c_lo {
        Regime::Harmful
    } else {
        Regime::Indeterminate
    }
}

/// Fraction of decisively measured cells (error `<= benign_err` or
/// `>= harmful_err`) on which the classifier agrees with the measurement.
/// Returns `(agreeing, decisive)`.
pub fn regime_agreement(
    points: &[(f64, f64)],
    thresholds: &RegimeThresholds,
    benign_err: f64,
    harmful_err: f64,
) -> (usize, usize) {
    let mut agree = 0;
    let mut decisive = 0;
    for &(ratio, err) in points {
        let measured = if err <= benign_err {
            Regime::Benign
        } else if err >= harmful_err {
            Regime::Harmful
        } else {
            continue;
        };
        decisive += 1;
        let predicted = if ratio >= thresholds.c_hi {
            Regime::Benign
        } else if ratio <= thresholds.c_lo {
            Regime::Harmful
        } else {
            Regime::Indeterminate
        };
        if predicted == measured {
            agree += 1;
        }
    }
    (agree, decisive)
}

/// Choose `c_lo <= c_hi` among the observed ratios maximizing agreement.
pub fn calibrate_thresholds(points: &[(f64, f64)], benign_err: f64, harmful_err: f64) -> RegimeThresholds {
    let mut ratios: Vec<f64> = points.iter().map(|p| p.0).collect();
    ratios.sort_by(f64::total_cmp);
    ratios.dedup();
    let mut best = (RegimeThresholds::default(), 0usize);
    for (a, &lo) in ratios.iter().enumerate() {
        for &hi in &ratios[a..] {
            let th = RegimeThresholds { c_lo: lo, c_hi: hi };
            let (agree, _) = regime_agreement(points, &th, benign_err, harmful_err);
            if agree > best.1 {
                best = (th, agree);
            }
        }
    }
    best.0
}
