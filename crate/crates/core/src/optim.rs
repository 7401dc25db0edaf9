//! Minibatch SGD and minibatch SAM.
//!
//! Each epoch draws a fresh uniformly random partition of the training set
//! into `H = n / B` batches. A SAM step first moves to
//! `W + tau * g / ||g||_F` (with `g` the batch gradient at `W`) and then
//! applies the batch gradient evaluated there to `W`.

use std::io::Write;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::network::{self, gradient_from_probe, init_weights, probe, BatchProbe, Gradient, NetConfig, Weights};
use crate::rng::{stream, stream_rng, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Sgd,
    Sam,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sgd => "sgd",
            Algorithm::Sam => "sam",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub eta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub algo: Algorithm,
    #[serde(default)]
    pub tau: f64,
    #[serde(default)]
    pub seed: u64,
    /// Extra snapshot stride in global iterations; 0 records epoch boundaries only.
    #[serde(default)]
    pub record_every: usize,
    /// For SAM runs: switch to SGD from this global iteration on.
    #[serde(default)]
    pub sam_until: Option<usize>,
    /// Keep full weight snapshots in the trajectory.
    #[serde(default)]
    pub record_weights: bool,
    /// Keep `<w_{y_i,r}, xi_i>` at every snapshot.
    #[serde(default = "default_true")]
    pub record_alignment: bool,
    /// For SAM steps, keep `<w, xi_k>` and `<w + eps, xi_k>` for `j = y_k`.
    #[serde(default)]
    pub record_sam_probes: bool,
}

impl TrainConfig {
    pub fn new(algo: Algorithm, eta: f64, batch_size: usize, epochs: usize) -> Self {
        TrainConfig {
            eta,
            batch_size,
            epochs,
            algo,
            tau: 0.0,
            seed: 0,
            record_every: 0,
            sam_until: None,
            record_weights: false,
            record_alignment: true,
            record_sam_probes: false,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid("eta", format!("learning rate must be positive, got {}", self.eta)));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be positive"));
        }
        if !n.is_multiple_of(self.batch_size) {
            return Err(Error::BatchDoesNotDivide {
                n,
                batch: self.batch_size,
            });
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(invalid("tau", format!("perturbation radius must be nonnegative, got {}", self.tau)));
        }
        Ok(())
    }

    /// Optimizer used at global iteration `global`.
    pub fn algo_at(&self, global: usize) -> Algorithm {
        match (self.algo, self.sam_until) {
            (Algorithm::Sam, Some(until)) if global >= until => Algorithm::Sgd,
            (a, _) => a,
        }
    }
}

/// Random partition of `0..n` into `n / batch` sorted batches. With
/// `batch == n` the single batch is `0..n` and no randomness is consumed.
pub fn epoch_schedule(n: usize, batch: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if batch == 0 || !n.is_multiple_of(batch) {
        return Err(Error::BatchDoesNotDivide { n, batch });
    }
    if batch == n {
        return Ok(vec![(0..n).collect()]);
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    Ok(perm
        .chunks(batch)
        .map(|c| {
            let mut c = c.to_vec();
            c.sort_unstable();
            c
        })
        .collect())
}

pub fn sgd_step(w: &Weights, ds: &Dataset, batch: &[usize], eta: f64) -> Result<Weights> {
    let g = network::batch_gradient(w, ds, batch)?;
    Ok(w.add_scaled(-eta, &g))
}

/// `tau * g / ||g||_F`, or zero when the gradient vanishes.
pub fn perturbation_from_gradient(g: &Gradient, tau: f64) -> Weights {
    let norm = network::gradient_norm(g);
    if norm == 0.0 || tau == 0.0 {
        Weights::zeros(g.m, g.d())
    } else {
        g.scale(tau / norm)
    }
}

pub fn sam_perturbation(w: &Weights, ds: &Dataset, batch: &[usize], tau: f64) -> Result<Weights> {
    let g = network::batch_gradient(w, ds, batch)?;
    Ok(perturbation_from_gradient(&g, tau))
}

pub fn sam_step(w: &Weights, ds: &Dataset, batch: &[usize], eta: f64, tau: f64) -> Result<Weights> {
    let eps = sam_perturbation(w, ds, batch, tau)?;
    let perturbed = w.add_scaled(1.0, &eps);
    let g = network::batch_gradient(&perturbed, ds, batch)?;
    Ok(w.add_scaled(-eta, &g))
}

/// Everything a hook can observe about one optimizer step.
pub struct StepContext<'a> {
    pub epoch: usize,
    pub batch: usize,
    pub global: usize,
    pub algo: Algorithm,
    pub eta: f64,
    pub ds: &'a Dataset,
    pub before: &'a Weights,
    pub after: &'a Weights,
    /// Probe at the point where the descent gradient was evaluated
    /// (`W + eps` for SAM). Its indicators and `l'` drove the update.
    pub probe: &'a BatchProbe,
    /// SAM only: probe at the unperturbed weights.
    pub unperturbed: Option<&'a BatchProbe>,
    pub perturbation: Option<&'a Weights>,
}

pub trait TrainHook {
    fn on_step(&mut self, ctx: &StepContext<'_>) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub epoch: usize,
    pub batch: usize,
    pub global: usize,
    pub train_loss: f64,
    /// `y_i f(W, x_i)` over the full training set.
    pub margins: Vec<f64>,
    pub alignment: Option<Array2<f64>>,
    pub weights: Option<Weights>,
}

impl Snapshot {
    pub fn min_margin(&self) -> f64 {
        self.margins.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_margin(&self) -> f64 {
        self.margins.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `<w_{y_k,r}, xi_k>` before and after the SAM perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseProbe {
    pub sample: usize,
    pub r: usize,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamStepRecord {
    pub epoch: usize,
    pub batch: usize,
    pub probes: Vec<NoiseProbe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub config: TrainConfig,
    pub initial: Weights,
    pub final_weights: Weights,
    pub snapshots: Vec<Snapshot>,
    /// Batches of every epoch, in execution order.
    pub schedule: Vec<Vec<Vec<usize>>>,
    pub sam_records: Vec<SamStepRecord>,
}

impl Trajectory {
    pub fn final_snapshot(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectory always has the initial snapshot")
    }

    pub fn final_loss(&self) -> f64 {
        self.final_snapshot().train_loss
    }

    /// Metrics CSV: `t,b,train_loss,min_margin,max_margin`.
    pub fn write_metrics_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,b,train_loss,min_margin,max_margin")?;
        for s in &self.snapshots {
            writeln!(
                out,
                "{},{},{:e},{:e},{:e}",
                s.epoch,
                s.batch,
                s.train_loss,
                s.min_margin(),
                s.max_margin()
            )?;
        }
        Ok(())
    }
}

fn snapshot(w: &Weights, ds: &Dataset, cfg: &TrainConfig, epoch: usize, batch: usize, global: usize) -> Result<Snapshot> {
    let all: Vec<usize> = (0..ds.len()).collect();
    let p = probe(w, ds, &all)?;
    let train_loss = network::mean_loss(&p, ds);
    if !train_loss.is_finite() {
        return Err(Error::NonFinite {
            epoch,
            batch,
            value: train_loss,
        });
    }
    Ok(Snapshot {
        epoch,
        batch,
        global,
        train_loss,
        margins: p.margins(ds),
        alignment: cfg.record_alignment.then(|| network::self_alignment(w, ds)),
        weights: cfg.record_weights.then(|| w.clone()),
    })
}

/// Initialize weights from `net` using the run seed, then train.
pub fn train(ds: &Dataset, net: &NetConfig, cfg: &TrainConfig, hooks: &mut [&mut dyn TrainHook]) -> Result<Trajectory> {
    let w0 = init_weights(net, &mut stream_rng(cfg.seed, &[stream::INIT]))?;
    train_from(ds, w0, cfg, hooks)
}

pub fn train_from(
    ds: &Dataset,
    w0: Weights,
    cfg: &TrainConfig,
    hooks: &mut [&mut dyn TrainHook],
) -> Result<Trajectory> {
    cfg.validate(ds.len())?;
    if w0.d() != ds.d() {
        return Err(Error::DimensionMismatch {
            expected: ds.d(),
            got: w0.d(),
            context: "initial weights vs data dimension",
        });
    }
    let mut sched_rng = stream_rng(cfg.seed, &[stream::SCHEDULE]);
    let h = ds.len() / cfg.batch_size;
    let mut w = w0.clone();
    let mut snapshots = vec![snapshot(&w, ds, cfg, 0, 0, 0)?];
    let mut schedule = Vec::with_capacity(cfg.epochs);
    let mut sam_records = Vec::new();

    for epoch in 0..cfg.epochs {
        let batches = epoch_schedule(ds.len(), cfg.batch_size, &mut sched_rng)?;
        for (b, batch) in batches.iter().enumerate() {
            let global = epoch * h + b;
            let algo = cfg.algo_at(global);
            let base = probe(&w, ds, batch)?;
            let (next, eval_probe, unperturbed, eps) = match algo {
                Algorithm::Sgd => {
                    let g = gradient_from_probe(&base, ds, w.m);
                    (w.add_scaled(-cfg.eta, &g), base, None, None)
                }
                Algorithm::Sam => {
                    let g = gradient_from_probe(&base, ds, w.m);
                    let eps = perturbation_from_gradient(&g, cfg.tau);
                    let perturbed = w.add_scaled(1.0, &eps);
                    let eval = probe(&perturbed, ds, batch)?;
                    let g2 = gradient_from_probe(&eval, ds, w.m);
                    (w.add_scaled(-cfg.eta, &g2), eval, Some(base), Some(eps))
                }
            };
            if !next.is_finite() || eval_probe.ell_primes.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    epoch,
                    batch: b,
                    value: f64::NAN,
                });
            }
            if cfg.record_sam_probes {
                if let Some(before) = &unperturbed {
                    sam_records.push(sam_record(epoch, b, ds, &w, before, &eval_probe));
                }
            }
            {
                let ctx = StepContext {
                    epoch,
                    batch: b,
                    global,
                    algo,
                    eta: cfg.eta,
                    ds,
                    before: &w,
                    after: &next,
                    probe: &eval_probe,
                    unperturbed: unperturbed.as_ref(),
                    perturbation: eps.as_ref(),
                };
                for hook in hooks.iter_mut() {
                    hook.on_step(&ctx)?;
                }
            }
            w = next;
            let done = global + 1;
            let at_boundary = b + 1 == h;
            let strided = cfg.record_every > 0 && done.is_multiple_of(cfg.record_every);
            if at_boundary {
                snapshots.push(snapshot(&w, ds, cfg, epoch + 1, 0, done)?);
            } else if strided {
                snapshots.push(snapshot(&w, ds, cfg, epoch, b + 1, done)?);
            }
        }
        schedule.push(batches);
    }

    Ok(Trajectory {
        config: cfg.clone(),
        initial: w0,
        final_weights: w,
        snapshots,
        schedule,
        sam_records,
    })
}

fn sam_record(epoch: usize, batch: usize, ds: &Dataset, w: &Weights, before: &BatchProbe, after: &BatchProbe) -> SamStepRecord {
    let mut probes = Vec::with_capacity(before.indices.len() * w.m);
    for (k, &i) in before.indices.iter().enumerate() {
        let y = ds.samples[i].y;
        for r in 0..w.m {
            let row = w.row_index(y, r);
            probes.push(NoiseProbe {
                sample: i,
                r,
                before: before.noise[[row, k]],
                after: after.noise[[row, k]],
            });
        }
    }
    SamStepRecord { epoch, batch, probes }
}
