//! Signal-noise decomposition of the filters.
//!
//! Every filter stays in `w0 + span{mu, xi_1, ..., xi_n}`:
//!
//! ```text
//! w_{j,r} = w0_{j,r} + j * gamma_{j,r} * mu / ||mu||^2
//!         + 1/(P-1) * sum_i (zeta_{j,r,i} + omega_{j,r,i}) * xi_i / ||xi_i||^2
//! ```
//!
//! Two independent routes compute the coefficients. [`Tracker`] applies the
//! per-step update rules using the exact loss derivatives and activation
//! indicators of each optimizer step. [`oracle_solve`] reads them off the
//! weights by solving the Gram normal equations of the basis. They must agree.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::network::{BatchProbe, Weights};
use crate::optim::{StepContext, TrainHook};

/// Condition-number guard for the basis Gram matrix.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coeffs {
    /// `(2, m)`, indexed by `[j.index(), r]`.
    pub gamma: Array2<f64>,
    /// `(2, m, n)`; nonnegative, zero unless `y_i == j`.
    pub zeta: Array3<f64>,
    /// `(2, m, n)`; nonpositive, zero unless `y_i == -j`.
    pub omega: Array3<f64>,
}

impl Coeffs {
    pub fn zeros(m: usize, n: usize) -> Self {
        Coeffs {
            gamma: Array2::zeros((2, m)),
            zeta: Array3::zeros((2, m, n)),
            omega: Array3::zeros((2, m, n)),
        }
    }

    pub fn m(&self) -> usize {
        self.gamma.ncols()
    }

    pub fn n(&self) -> usize {
        self.zeta.shape()[2]
    }

    /// `rho = zeta + omega`.
    pub fn rho(&self) -> Array3<f64> {
        &self.zeta + &self.omega
    }

    /// Count of entries breaking the sign and label-pattern invariants.
    pub fn invariant_violations(&self, labels: &[Label]) -> usize {
        let mut bad = 0;
        for j in Label::BOTH {
            for r in 0..self.m() {
                for (i, &y) in labels.iter().enumerate() {
                    let z = self.zeta[[j.index(), r, i]];
                    let o = self.omega[[j.index(), r, i]];
                    if z < 0.0 || o > 0.0 {
                        bad += 1;
                    }
                    if y != j && z != 0.0 {
                        bad += 1;
                    }
                    if y == j && o != 0.0 {
                        bad += 1;
                    }
                }
            }
        }
        bad
    }
}

/// Activation indicators and loss derivatives of one optimizer step,
/// restricted to the samples of the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct StepIndicators {
    pub batch: Vec<usize>,
    pub ell_primes: Vec<f64>,
    /// `relu'(<w_row, y_hat_k mu>)`, shape `(2m, |batch|)`.
    pub signal_active: Array2<bool>,
    /// `relu'(<w_row, xi_k>)`, shape `(2m, |batch|)`.
    pub noise_active: Array2<bool>,
}

impl StepIndicators {
    pub fn from_probe(probe: &BatchProbe, ds: &Dataset) -> Self {
        let rows = probe.signal.len();
        let b = probe.indices.len();
        StepIndicators {
            batch: probe.indices.clone(),
            ell_primes: probe.ell_primes.clone(),
            signal_active: Array2::from_shape_fn((rows, b), |(row, k)| probe.signal_active(ds, row, k)),
            noise_active: Array2::from_shape_fn((rows, b), |(row, k)| probe.noise_active(row, k)),
        }
    }
}

/// Fixed quantities entering every coefficient update.
#[derive(Debug, Clone)]
pub struct UpdateScale {
    pub eta: f64,
    pub batch_size: usize,
    pub m: usize,
    pub patches: usize,
    pub mu_norm_sq: f64,
    pub xi_norms_sq: Vec<f64>,
    pub labels: Vec<Label>,
    pub y_hat: Vec<Label>,
}

impl UpdateScale {
    pub fn new(ds: &Dataset, m: usize, eta: f64, batch_size: usize) -> Self {
        UpdateScale {
            eta,
            batch_size,
            m,
            patches: ds.params.patches,
            mu_norm_sq: ds.mu_norm_sq(),
            xi_norms_sq: ds.xi_norms_sq(),
            labels: ds.samples.iter().map(|s| s.y).collect(),
            y_hat: ds.samples.iter().map(|s| s.y_hat).collect(),
        }
    }
}

fn apply_update(c: &Coeffs, ind: &StepIndicators, scale: &UpdateScale) -> Result<Coeffs> {
    let m = scale.m;
    let b = ind.batch.len();
    for (name, arr) in [("signal", &ind.signal_active), ("noise", &ind.noise_active)] {
        if arr.dim() != (2 * m, b) {
            return Err(Error::DimensionMismatch {
                expected: 2 * m * b,
                got: arr.len(),
                context: if name == "signal" {
                    "signal indicator array"
                } else {
                    "noise indicator array"
                },
            });
        }
    }
    if ind.ell_primes.len() != b || c.m() != m || c.n() != scale.labels.len() {
        return Err(Error::DimensionMismatch {
            expected: b,
            got: ind.ell_primes.len(),
            context: "loss derivatives vs batch",
        });
    }
    let denom = (scale.batch_size * m) as f64;
    let signal_step = scale.eta / denom * scale.mu_norm_sq;
    let pm1 = (scale.patches - 1) as f64;
    let noise_step = scale.eta * pm1 * pm1 / denom;

    let mut out = c.clone();
    for j in Label::BOTH {
        for r in 0..m {
            let row = j.index() * m + r;
            let mut dgamma = 0.0;
            for (k, &i) in ind.batch.iter().enumerate() {
                let lp = ind.ell_primes[k];
                if ind.signal_active[[row, k]] {
                    // S_+ (clean) contributes -l', S_- (flipped) contributes +l'.
                    let agree = scale.labels[i].sign() * scale.y_hat[i].sign();
                    dgamma -= lp * agree;
                }
                if ind.noise_active[[row, k]] {
                    let delta = noise_step * lp * scale.xi_norms_sq[i];
                    if scale.labels[i] == j {
                        out.zeta[[j.index(), r, i]] -= delta;
                    } else {
                        out.omega[[j.index(), r, i]] += delta;
                    }
                }
            }
            out.gamma[[j.index(), r]] += signal_step * dgamma;
        }
    }
    Ok(out)
}

/// Coefficient update for an SGD step, driven by indicators at `W`.
pub fn track_step_sgd(c: &Coeffs, ind: &StepIndicators, scale: &UpdateScale) -> Result<Coeffs> {
    apply_update(c, ind, scale)
}

/// Coefficient update for a SAM step. `ind` must hold the indicators and loss
/// derivatives evaluated at the perturbed weights `W + eps`.
pub fn track_step_sam(c: &Coeffs, ind: &StepIndicators, scale: &UpdateScale) -> Result<Coeffs> {
    apply_update(c, ind, scale)
}

/// The basis `{mu, xi_1, ..., xi_n}` with its factored Gram matrix.
pub struct Basis {
    vectors: Vec<ndarray::Array1<f64>>,
    norms_sq: Vec<f64>,
    patches: usize,
    chol: Cholesky<f64, nalgebra::Dyn>,
    pub condition: f64,
}

impl Basis {
    pub fn new(ds: &Dataset) -> Result<Self> {
        let mut vectors = Vec::with_capacity(ds.len() + 1);
        vectors.push(ds.mu.clone());
        vectors.extend(ds.samples.iter().map(|s| s.xi.clone()));
        let k = vectors.len();
        let gram = DMatrix::from_fn(k, k, |a, b| vectors[a].dot(&vectors[b]));
        let eig = SymmetricEigen::new(gram.clone());
        let (mut lo, mut lo_idx, mut hi) = (f64::INFINITY, 0, 0.0f64);
        for (idx, &v) in eig.eigenvalues.iter().enumerate() {
            if v < lo {
                lo = v;
                lo_idx = idx;
            }
            hi = hi.max(v);
        }
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::IllConditioned {
                condition,
                detail: near_dependence(&eig.eigenvectors.column(lo_idx).iter().copied().collect::<Vec<_>>()),
            });
        }
        let chol = Cholesky::new(gram).ok_or_else(|| Error::IllConditioned {
            condition,
            detail: "cholesky factorization failed".into(),
        })?;
        let norms_sq = vectors.iter().map(|v| v.dot(v)).collect();
        Ok(Basis {
            vectors,
            norms_sq,
            patches: ds.params.patches,
            chol,
            condition,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

fn near_dependence(v: &[f64]) -> String {
    let mut idx: Vec<usize> = (0..v.len()).filter(|&i| v[i].abs() > 0.1).collect();
    idx.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()));
    let names: Vec<String> = idx
        .iter()
        .map(|&i| if i == 0 { "mu".to_string() } else { format!("xi_{}", i - 1) })
        .collect();
    format!("near-linear dependence among {{{}}}", names.join(", "))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSolution {
    pub gamma: Array2<f64>,
    pub rho: Array3<f64>,
    /// `||(W - W0) - projection||_F`.
    pub residual: f64,
    pub delta_norm: f64,
}

impl OracleSolution {
    pub fn relative_residual(&self) -> f64 {
        if self.delta_norm == 0.0 {
            self.residual
        } else {
            self.residual / self.delta_norm
        }
    }

    /// Split `rho` by sign into `zeta`/`omega` form.
    pub fn to_coeffs(&self) -> Coeffs {
        Coeffs {
            gamma: self.gamma.clone(),
            zeta: self.rho.mapv(|v| if v >= 0.0 { v } else { 0.0 }),
            omega: self.rho.mapv(|v| if v <= 0.0 { v } else { 0.0 }),
        }
    }
}

pub fn oracle_solve(w: &Weights, w0: &Weights, basis: &Basis) -> Result<OracleSolution> {
    if w.w.dim() != w0.w.dim() || w.d() != basis.vectors[0].len() {
        return Err(Error::DimensionMismatch {
            expected: w0.w.len(),
            got: w.w.len(),
            context: "weights vs initial weights vs basis",
        });
    }
    let m = w.m;
    let n = basis.len() - 1;
    let pm1 = (basis.patches - 1) as f64;
    let mut gamma = Array2::zeros((2, m));
    let mut rho = Array3::zeros((2, m, n));
    let mut residual_sq = 0.0;
    let mut delta_sq = 0.0;
    for row in 0..2 * m {
        let j = w.row_sign(row);
        let r = row % m;
        let delta = &w.w.row(row) - &w0.w.row(row);
        delta_sq += delta.dot(&delta);
        let rhs = DVector::from_iterator(basis.len(), basis.vectors.iter().map(|v| v.dot(&delta)));
        let c = basis.chol.solve(&rhs);
        let mut resid = delta.clone();
        for (coef, v) in c.iter().zip(&basis.vectors) {
            resid.scaled_add(-coef, v);
        }
        residual_sq += resid.dot(&resid);
        gamma[[j.index(), r]] = j.sign() * c[0] * basis.norms_sq[0];
        for i in 0..n {
            rho[[j.index(), r, i]] = pm1 * basis.norms_sq[i + 1] * c[i + 1];
        }
    }
    Ok(OracleSolution {
        gamma,
        rho,
        residual: residual_sq.sqrt(),
        delta_norm: delta_sq.sqrt(),
    })
}

/// Rebuild the filters from coefficients. A zero signal contributes nothing.
pub fn reconstruct(c: &Coeffs, ds: &Dataset, w0: &Weights) -> Result<Weights> {
    if c.m() != w0.m || c.n() != ds.len() || w0.d() != ds.d() {
        return Err(Error::DimensionMismatch {
            expected: w0.m,
            got: c.m(),
            context: "coefficients vs weights vs dataset",
        });
    }
    let mu_sq = ds.mu_norm_sq();
    let pm1 = (ds.params.patches - 1) as f64;
    let xi_sq = ds.xi_norms_sq();
    let mut w = w0.clone();
    for j in Label::BOTH {
        for r in 0..w0.m {
            let row = w0.row_index(j, r);
            let mut filt = w.w.row_mut(row);
            let g = c.gamma[[j.index(), r]];
            if mu_sq > 0.0 && g != 0.0 {
                filt.scaled_add(j.sign() * g / mu_sq, &ds.mu);
            }
            for (i, s) in ds.samples.iter().enumerate() {
                let rho = c.zeta[[j.index(), r, i]] + c.omega[[j.index(), r, i]];
                if rho != 0.0 {
                    filt.scaled_add(rho / (pm1 * xi_sq[i]), &s.xi);
                }
            }
        }
    }
    Ok(w)
}

/// Largest absolute differences between tracked and oracle coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Agreement {
    pub gamma: f64,
    pub rho: f64,
    pub relative_residual: f64,
}

pub fn compare(tracked: &Coeffs, oracle: &OracleSolution) -> Agreement {
    let gamma = tracked
        .gamma
        .iter()
        .zip(oracle.gamma.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let rho = tracked
        .rho()
        .iter()
        .zip(oracle.rho.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Agreement {
        gamma,
        rho,
        relative_residual: oracle.relative_residual(),
    }
}

/// `|<w - w0, mu> - j gamma|` per filter, with a data-dependent bound.
///
/// The gap equals `|sum_i rho_i/(P-1) <xi_i, mu>/||xi_i||^2|`, so the bound
/// `sum_i |rho_i|/(P-1) |<xi_i, mu>|/||xi_i||^2` always holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignalGap {
    pub max_gap: f64,
    pub max_bound: f64,
    pub violations: usize,
}

pub fn signal_gap(c: &Coeffs, w: &Weights, w0: &Weights, ds: &Dataset) -> SignalGap {
    let pm1 = (ds.params.patches - 1) as f64;
    let xi_sq = ds.xi_norms_sq();
    let cross: Vec<f64> = ds.samples.iter().map(|s| s.xi.dot(&ds.mu).abs()).collect();
    let mut out = SignalGap {
        max_gap: 0.0,
        max_bound: 0.0,
        violations: 0,
    };
    for j in Label::BOTH {
        for r in 0..w.m {
            let row = w.row_index(j, r);
            let delta = &w.w.row(row) - &w0.w.row(row);
            let gap = (delta.dot(&ds.mu) - j.sign() * c.gamma[[j.index(), r]]).abs();
            let bound: f64 = (0..ds.len())
                .map(|i| {
                    let rho = c.zeta[[j.index(), r, i]] + c.omega[[j.index(), r, i]];
                    rho.abs() / pm1 * cross[i] / xi_sq[i]
                })
                .sum();
            out.max_gap = out.max_gap.max(gap);
            out.max_bound = out.max_bound.max(bound);
            // Rounding slack relative to the magnitudes involved.
            if gap > bound * (1.0 + 1e-9) + 1e-12 * (1.0 + delta.dot(&delta).sqrt() * ds.mu_norm_sq().sqrt()) {
                out.violations += 1;
            }
        }
    }
    out
}

/// One row of the coefficient time series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoeffSummary {
    pub epoch: usize,
    pub batch: usize,
    pub j: i8,
    pub r: usize,
    pub gamma: f64,
    pub sum_zeta: f64,
    pub min_omega: f64,
    pub max_zeta: f64,
}

/// Training hook running the incremental update rules, checking the sign
/// pattern every step, and optionally cross-checking against the oracle.
pub struct Tracker {
    pub coeffs: Coeffs,
    scale: UpdateScale,
    basis: Option<Basis>,
    w0: Weights,
    h: usize,
    record_every: usize,
    /// Tracked coefficients at epoch boundaries and every `record_every` steps.
    pub history: Vec<(usize, usize, Coeffs)>,
    pub agreement: Vec<(usize, usize, Agreement)>,
    pub sign_violations: usize,
    pub steps: usize,
    pub max_gamma_err: f64,
    pub max_rho_err: f64,
    pub max_relative_residual: f64,
}

impl Tracker {
    pub fn new(ds: &Dataset, w0: &Weights, eta: f64, batch_size: usize) -> Self {
        let m = w0.m;
        let coeffs = Coeffs::zeros(m, ds.len());
        Tracker {
            history: vec![(0, 0, coeffs.clone())],
            coeffs,
            scale: UpdateScale::new(ds, m, eta, batch_size),
            basis: None,
            w0: w0.clone(),
            h: ds.len() / batch_size.max(1),
            record_every: 0,
            agreement: Vec::new(),
            sign_violations: 0,
            steps: 0,
            max_gamma_err: 0.0,
            max_rho_err: 0.0,
            max_relative_residual: 0.0,
        }
    }

    /// Cross-check against the oracle at every recorded iteration.
    pub fn with_oracle(mut self, basis: Basis) -> Self {
        self.basis = Some(basis);
        self
    }

    pub fn record_every(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    pub fn write_series_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,b,j,r,gamma,sum_zeta,min_omega,max_zeta")?;
        for (t, b, c) in &self.history {
            for s in summarize(*t, *b, c) {
                writeln!(
                    out,
                    "{},{},{},{},{:e},{:e},{:e},{:e}",
                    s.epoch, s.batch, s.j, s.r, s.gamma, s.sum_zeta, s.min_omega, s.max_zeta
                )?;
            }
        }
        Ok(())
    }
}

/// Serializable outcome of a tracked run, enough to re-run the checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedRecord {
    pub history: Vec<(usize, usize, Coeffs)>,
    pub steps: usize,
    pub sign_violations: usize,
    pub oracle_checks: usize,
    pub max_oracle_err: f64,
    pub max_relative_residual: f64,
}

impl Tracker {
    pub fn record(&self) -> TrackedRecord {
        TrackedRecord {
            history: self.history.clone(),
            steps: self.steps,
            sign_violations: self.sign_violations,
            oracle_checks: self.agreement.len(),
            max_oracle_err: self.max_gamma_err.max(self.max_rho_err),
            max_relative_residual: self.max_relative_residual,
        }
    }
}

pub fn summarize(epoch: usize, batch: usize, c: &Coeffs) -> Vec<CoeffSummary> {
    let mut out = Vec::with_capacity(2 * c.m());
    for j in Label::BOTH {
        for r in 0..c.m() {
            let z = c.zeta.slice(ndarray::s![j.index(), r, ..]);
            let o = c.omega.slice(ndarray::s![j.index(), r, ..]);
            out.push(CoeffSummary {
                epoch,
                batch,
                j: j.as_i8(),
                r,
                gamma: c.gamma[[j.index(), r]],
                sum_zeta: z.sum(),
                min_omega: o.iter().copied().fold(0.0, f64::min),
                max_zeta: z.iter().copied().fold(0.0, f64::max),
            });
        }
    }
    out
}

/// Full `(t, b, j, r, i, zeta, omega)` dump of a coefficient tensor.
pub fn write_tensor_csv<W: Write>(mut out: W, epoch: usize, batch: usize, c: &Coeffs) -> std::io::Result<()> {
    writeln!(out, "t,b,j,r,i,zeta,omega")?;
    for j in Label::BOTH {
        for r in 0..c.m() {
            for i in 0..c.n() {
                writeln!(
                    out,
                    "{},{},{},{},{},{:e},{:e}",
                    epoch,
                    batch,
                    j.as_i8(),
                    r,
                    i,
                    c.zeta[[j.index(), r, i]],
                    c.omega[[j.index(), r, i]]
                )?;
            }
        }
    }
    Ok(())
}

impl TrainHook for Tracker {
    fn on_step(&mut self, ctx: &StepContext<'_>) -> Result<()> {
        let ind = StepIndicators::from_probe(ctx.probe, ctx.ds);
        self.scale.eta = ctx.eta;
        self.coeffs = match ctx.algo {
            crate::optim::Algorithm::Sgd => track_step_sgd(&self.coeffs, &ind, &self.scale)?,
            crate::optim::Algorithm::Sam => track_step_sam(&self.coeffs, &ind, &self.scale)?,
        };
        self.sign_violations += self.coeffs.invariant_violations(&self.scale.labels);
        self.steps += 1;

        let done = ctx.global + 1;
        let boundary = ctx.batch + 1 == self.h;
        let strided = self.record_every > 0 && done.is_multiple_of(self.record_every);
        if boundary || strided {
            let (t, b) = if boundary { (ctx.epoch + 1, 0) } else { (ctx.epoch, ctx.batch + 1) };
            if let Some(basis) = &self.basis {
                let sol = oracle_solve(ctx.after, &self.w0, basis)?;
                let a = compare(&self.coeffs, &sol);
                self.max_gamma_err = self.max_gamma_err.max(a.gamma);
                self.max_rho_err = self.max_rho_err.max(a.rho);
                self.max_relative_residual = self.max_relative_residual.max(a.relative_residual);
                self.agreement.push((t, b, a));
            }
            self.history.push((t, b, self.coeffs.clone()));
        }
        Ok(())
    }
}
