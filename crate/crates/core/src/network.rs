//! Two-layer convolutional ReLU network with fixed second layer.
//!
//! `f(W, x) = F_{+1}(W_{+1}, x) - F_{-1}(W_{-1}, x)` with
//! `F_j = (1/m) sum_r sum_p relu(<w_{j,r}, x_p>)`. Only the first-layer
//! filters are trained. The ReLU derivative is taken as 1 at 0.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::error::{invalid, Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Each entry i.i.d. `N(0, sigma_0^2)`.
    Gaussian,
    /// Each entry i.i.d. `U(-1/sqrt(d), 1/sqrt(d))`, the usual framework default
    /// for a layer with fan-in `d`.
    UniformFanIn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Filters per output sign.
    pub m: usize,
    pub d: usize,
    pub init: InitScheme,
    #[serde(default)]
    pub sigma_0: f64,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(invalid("m", "need at least one filter per sign"));
        }
        if self.d == 0 {
            return Err(invalid("d", "dimension must be positive"));
        }
        if self.init == InitScheme::Gaussian && !(self.sigma_0 >= 0.0 && self.sigma_0.is_finite()) {
            return Err(invalid("sigma_0", format!("must be nonnegative and finite, got {}", self.sigma_0)));
        }
        Ok(())
    }

    /// Standard deviation of a single initial weight entry.
    pub fn init_std(&self) -> f64 {
        match self.init {
            InitScheme::Gaussian => self.sigma_0,
            InitScheme::UniformFanIn => 1.0 / (3.0 * self.d as f64).sqrt(),
        }
    }
}

/// Filter bank `w_{j,r}`, stored as a `(2m, d)` matrix. Rows `0..m` are the
/// `j = +1` filters, rows `m..2m` the `j = -1` filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub m: usize,
    pub w: Array2<f64>,
}

/// Gradients share the weight layout.
pub type Gradient = Weights;

impl Weights {
    pub fn zeros(m: usize, d: usize) -> Self {
        Weights {
            m,
            w: Array2::zeros((2 * m, d)),
        }
    }

    pub fn d(&self) -> usize {
        self.w.ncols()
    }

    pub fn row_index(&self, j: Label, r: usize) -> usize {
        j.index() * self.m + r
    }

    /// Output sign of row `row`.
    pub fn row_sign(&self, row: usize) -> Label {
        if row < self.m {
            Label::Pos
        } else {
            Label::Neg
        }
    }

    pub fn filter(&self, j: Label, r: usize) -> ArrayView1<'_, f64> {
        self.w.row(self.row_index(j, r))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.w.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|v| v.is_finite())
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: f64, other: &Weights) -> Weights {
        let mut out = self.clone();
        out.w.scaled_add(alpha, &other.w);
        out
    }

    pub fn scale(&self, c: f64) -> Weights {
        Weights {
            m: self.m,
            w: &self.w * c,
        }
    }
}

pub fn init_weights(cfg: &NetConfig, rng: &mut Rng) -> Result<Weights> {
    cfg.validate()?;
    let shape = (2 * cfg.m, cfg.d);
    let w = match cfg.init {
        InitScheme::Gaussian => {
            if cfg.sigma_0 == 0.0 {
                Array2::zeros(shape)
            } else {
                let dist = Normal::new(0.0, cfg.sigma_0).map_err(|e| invalid("sigma_0", e.to_string()))?;
                Array2::from_shape_simple_fn(shape, || dist.sample(rng))
            }
        }
        InitScheme::UniformFanIn => {
            let bound = 1.0 / (cfg.d as f64).sqrt();
            let dist = Uniform::new(-bound, bound).map_err(|e| invalid("d", e.to_string()))?;
            Array2::from_shape_simple_fn(shape, || dist.sample(rng))
        }
    };
    Ok(Weights { m: cfg.m, w })
}

#[inline]
pub fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

/// ReLU derivative with the convention `relu'(0) = 1`.
#[inline]
pub fn relu_grad(z: f64) -> f64 {
    if z >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Logistic loss `log(1 + exp(-z))`.
pub fn loss(z: f64) -> f64 {
    if z >= 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// `d/dz log(1 + exp(-z)) = -1 / (1 + exp(z))`.
pub fn loss_grad(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        -e / (1.0 + e)
    } else {
        -1.0 / (1.0 + z.exp())
    }
}

/// Network output on arbitrary patches.
pub fn forward(w: &Weights, patches: &[ArrayView1<'_, f64>]) -> Result<f64> {
    let d = w.d();
    for p in patches {
        if p.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: p.len(),
                context: "input patch",
            });
        }
    }
    let mut heads = [0.0f64; 2];
    for row in 0..2 * w.m {
        let filter = w.w.row(row);
        let s: f64 = patches.iter().map(|p| relu(filter.dot(p))).sum();
        heads[w.row_sign(row).index()] += s;
    }
    Ok((heads[0] - heads[1]) / w.m as f64)
}

/// All inner products needed to evaluate the network and its gradient on a
/// set of samples, plus the derived outputs and loss derivatives.
///
/// The activation indicators of a step are read off this record:
/// signal patch of sample `k` fires for row `row` iff
/// `y_hat_k * signal[row] >= 0`, noise patches iff `noise[[row, k]] >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchProbe {
    pub indices: Vec<usize>,
    /// `<w_row, mu>` for each of the `2m` rows.
    pub signal: Array1<f64>,
    /// `<w_row, xi_k>`, shape `(2m, |batch|)`.
    pub noise: Array2<f64>,
    /// `f(W, x_k)`.
    pub outputs: Vec<f64>,
    /// `l'(y_k f(W, x_k))`.
    pub ell_primes: Vec<f64>,
}

impl BatchProbe {
    pub fn signal_active(&self, ds: &Dataset, row: usize, k: usize) -> bool {
        let s = &ds.samples[self.indices[k]];
        s.y_hat.sign() * self.signal[row] >= 0.0
    }

    pub fn noise_active(&self, row: usize, k: usize) -> bool {
        self.noise[[row, k]] >= 0.0
    }

    pub fn margins(&self, ds: &Dataset) -> Vec<f64> {
        self.indices
            .iter()
            .zip(&self.outputs)
            .map(|(&i, &f)| ds.samples[i].y.sign() * f)
            .collect()
    }
}

fn check_dims(w: &Weights, ds: &Dataset) -> Result<()> {
    if w.d() != ds.d() {
        return Err(Error::DimensionMismatch {
            expected: ds.d(),
            got: w.d(),
            context: "weights vs data dimension",
        });
    }
    Ok(())
}

pub fn probe(w: &Weights, ds: &Dataset, batch: &[usize]) -> Result<BatchProbe> {
    check_dims(w, ds)?;
    let rows = 2 * w.m;
    let signal = w.w.dot(&ds.mu);
    let mut noise = Array2::zeros((rows, batch.len()));
    for (k, &i) in batch.iter().enumerate() {
        let col = w.w.dot(&ds.samples[i].xi);
        noise.column_mut(k).assign(&col);
    }
    let pm1 = (ds.params.patches - 1) as f64;
    let mut outputs = Vec::with_capacity(batch.len());
    let mut ell_primes = Vec::with_capacity(batch.len());
    for (k, &i) in batch.iter().enumerate() {
        let s = &ds.samples[i];
        let mut heads = [0.0f64; 2];
        for row in 0..rows {
            let v = relu(s.y_hat.sign() * signal[row]) + pm1 * relu(noise[[row, k]]);
            heads[w.row_sign(row).index()] += v;
        }
        let f = (heads[0] - heads[1]) / w.m as f64;
        outputs.push(f);
        ell_primes.push(loss_grad(s.y.sign() * f));
    }
    Ok(BatchProbe {
        indices: batch.to_vec(),
        signal,
        noise,
        outputs,
        ell_primes,
    })
}

/// Gradient of the batch loss at the weights the probe was taken at.
pub fn gradient_from_probe(probe: &BatchProbe, ds: &Dataset, m: usize) -> Gradient {
    let rows = 2 * m;
    let b = probe.indices.len() as f64;
    let pm1 = (ds.params.patches - 1) as f64;
    let scale = 1.0 / (b * m as f64);
    let mut g = Weights::zeros(m, ds.d());
    for row in 0..rows {
        let j = g.row_sign(row).sign();
        let mut mu_coef = 0.0;
        let mut grow = g.w.row_mut(row);
        for (k, &i) in probe.indices.iter().enumerate() {
            let s = &ds.samples[i];
            let base = probe.ell_primes[k] * s.y.sign() * j;
            if probe.noise[[row, k]] >= 0.0 {
                grow.scaled_add(scale * pm1 * base, &s.xi);
            }
            if s.y_hat.sign() * probe.signal[row] >= 0.0 {
                mu_coef += base * s.y_hat.sign();
            }
        }
        if mu_coef != 0.0 {
            grow.scaled_add(scale * mu_coef, &ds.mu);
        }
    }
    g
}

pub fn batch_gradient(w: &Weights, ds: &Dataset, batch: &[usize]) -> Result<Gradient> {
    if batch.is_empty() {
        return Err(invalid("batch", "batch must be nonempty"));
    }
    let p = probe(w, ds, batch)?;
    Ok(gradient_from_probe(&p, ds, w.m))
}

pub fn batch_loss(w: &Weights, ds: &Dataset, batch: &[usize]) -> Result<f64> {
    if batch.is_empty() {
        return Err(invalid("batch", "batch must be nonempty"));
    }
    let p = probe(w, ds, batch)?;
    Ok(mean_loss(&p, ds))
}

pub(crate) fn mean_loss(p: &BatchProbe, ds: &Dataset) -> f64 {
    let total: f64 = p.margins(ds).into_iter().map(loss).sum();
    total / p.indices.len() as f64
}

/// Network outputs on every sample of `ds`.
pub fn outputs(w: &Weights, ds: &Dataset) -> Result<Vec<f64>> {
    let all: Vec<usize> = (0..ds.len()).collect();
    Ok(probe(w, ds, &all)?.outputs)
}

/// Output on one data-model sample; same arithmetic as [`probe`].
pub fn sample_output(w: &Weights, mu: &Array1<f64>, patches: usize, s: &crate::data::Sample) -> f64 {
    let pm1 = (patches - 1) as f64;
    let mut heads = [0.0f64; 2];
    for row in 0..2 * w.m {
        let f = w.w.row(row);
        let v = relu(s.y_hat.sign() * f.dot(mu)) + pm1 * relu(f.dot(&s.xi));
        heads[w.row_sign(row).index()] += v;
    }
    (heads[0] - heads[1]) / w.m as f64
}

/// `<w_{y_i, r}, xi_i>` for every sample `i` and filter `r`, shape `(n, m)`.
pub fn self_alignment(w: &Weights, ds: &Dataset) -> Array2<f64> {
    let mut out = Array2::zeros((ds.len(), w.m));
    for (i, s) in ds.samples.iter().enumerate() {
        for r in 0..w.m {
            out[[i, r]] = w.filter(s.y, r).dot(&s.xi);
        }
    }
    out
}

/// Sum of squared gradient entries over the whole filter bank.
pub fn gradient_norm(g: &Gradient) -> f64 {
    g.w.map_axis(Axis(1), |r| r.dot(&r)).sum().sqrt()
}
