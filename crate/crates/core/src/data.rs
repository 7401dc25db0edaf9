//! Patch-based signal-plus-noise data.
//!
//! Each input has `P` patches of dimension `d`. One patch, chosen uniformly,
//! carries the signal `y_hat * mu`; the remaining `P - 1` patches are all the
//! same Gaussian noise vector `xi ~ N(0, sigma_p^2 I_d)`. The observed label
//! `y` is the true label `y_hat` flipped with probability `p`.

use ndarray::Array1;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{stream, stream_rng, Rng};

/// Binary label in {+1, -1}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Pos,
    Neg,
}

impl Label {
    pub const BOTH: [Label; 2] = [Label::Pos, Label::Neg];

    pub fn sign(self) -> f64 {
        match self {
            Label::Pos => 1.0,
            Label::Neg => -1.0,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Label::Pos => 1,
            Label::Neg => -1,
        }
    }

    pub fn from_i8(v: i8) -> Option<Label> {
        match v {
            1 => Some(Label::Pos),
            -1 => Some(Label::Neg),
            _ => None,
        }
    }

    /// Row block of this output head in a weight matrix (+1 first).
    pub fn index(self) -> usize {
        match self {
            Label::Pos => 0,
            Label::Neg => 1,
        }
    }

    pub fn flip(self) -> Label {
        match self {
            Label::Pos => Label::Neg,
            Label::Neg => Label::Pos,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataParams {
    pub d: usize,
    #[serde(rename = "P")]
    pub patches: usize,
    pub sigma_p: f64,
    /// Label-flip probability.
    pub p: f64,
    pub mu_norm: f64,
}

impl DataParams {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(invalid("d", "patch dimension must be positive"));
        }
        if self.patches < 2 {
            return Err(invalid("P", format!("need at least 2 patches, got {}", self.patches)));
        }
        if !(self.sigma_p > 0.0 && self.sigma_p.is_finite()) {
            return Err(invalid("sigma_p", format!("must be positive and finite, got {}", self.sigma_p)));
        }
        if !(0.0..0.5).contains(&self.p) {
            return Err(invalid("p", format!("flip probability must lie in [0, 0.5), got {}", self.p)));
        }
        if !(self.mu_norm >= 0.0 && self.mu_norm.is_finite()) {
            return Err(invalid("mu_norm", format!("must be nonnegative and finite, got {}", self.mu_norm)));
        }
        Ok(())
    }

    /// Signal-to-noise ratio `||mu|| / ((P-1) sigma_p sqrt(d))`.
    pub fn snr(&self) -> f64 {
        self.mu_norm / ((self.patches - 1) as f64 * self.sigma_p * (self.d as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub y: Label,
    pub y_hat: Label,
    pub xi: Array1<f64>,
    pub signal_pos: usize,
}

impl Sample {
    pub fn is_clean(&self) -> bool {
        self.y == self.y_hat
    }

    /// Materialize the `P` patches given the shared signal vector.
    pub fn patches(&self, mu: &Array1<f64>, num_patches: usize) -> Vec<Array1<f64>> {
        (0..num_patches)
            .map(|k| {
                if k == self.signal_pos {
                    mu * self.y_hat.sign()
                } else {
                    self.xi.clone()
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub params: DataParams,
    pub mu: Array1<f64>,
    pub samples: Vec<Sample>,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn d(&self) -> usize {
        self.mu.len()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.y).collect()
    }

    pub fn xi_norms_sq(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.xi.dot(&s.xi)).collect()
    }

    pub fn mu_norm_sq(&self) -> f64 {
        self.mu.dot(&self.mu)
    }
}

/// `mu = mu_norm * e_1`.
pub fn make_signal(d: usize, mu_norm: f64) -> Result<Array1<f64>> {
    if d == 0 {
        return Err(invalid("d", "patch dimension must be positive"));
    }
    if !(mu_norm >= 0.0) {
        return Err(invalid("mu_norm", format!("must be nonnegative, got {mu_norm}")));
    }
    let mut mu = Array1::zeros(d);
    mu[0] = mu_norm;
    Ok(mu)
}

/// Draw one sample. Draw order: true label, flip, signal position, noise.
pub fn gen_sample(params: &DataParams, rng: &mut Rng) -> Sample {
    let y_hat = if rng.random_bool(0.5) { Label::Pos } else { Label::Neg };
    let flipped = params.p > 0.0 && rng.random_bool(params.p);
    let y = if flipped { y_hat.flip() } else { y_hat };
    let signal_pos = rng.random_range(0..params.patches);
    let xi = Array1::from_shape_fn(params.d, |_| {
        let z: f64 = StandardNormal.sample(rng);
        params.sigma_p * z
    });
    Sample {
        y,
        y_hat,
        xi,
        signal_pos,
    }
}

/// Generate `n` samples. Sample `i` uses its own stream derived from
/// `(seed, i)`, so the result does not depend on generation order.
pub fn gen_dataset(params: &DataParams, mu: Array1<f64>, n: usize, seed: u64) -> Result<Dataset> {
    params.validate()?;
    if n == 0 {
        return Err(invalid("n", "dataset must have at least one sample"));
    }
    if mu.len() != params.d {
        return Err(crate::Error::DimensionMismatch {
            expected: params.d,
            got: mu.len(),
            context: "signal vector",
        });
    }
    let samples = (0..n)
        .map(|i| {
            let mut rng = stream_rng(seed, &[stream::DATA, i as u64]);
            gen_sample(params, &mut rng)
        })
        .collect();
    Ok(Dataset {
        params: *params,
        mu,
        samples,
        seed,
    })
}

/// Result of checking the high-probability inner-product bounds on a dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub delta: f64,
    pub norm_lower: f64,
    pub norm_upper: f64,
    /// Sample indices whose `||xi||^2` falls outside `[norm_lower, norm_upper]`.
    pub norm_failures: Vec<usize>,
    pub cross_bound: f64,
    pub max_cross: f64,
    pub cross_failures: Vec<(usize, usize)>,
    pub signal_bound: f64,
    pub max_signal: f64,
    pub signal_failures: Vec<usize>,
    /// `|S_+ ∩ S_y|` for y = +1, -1.
    pub clean_counts: [usize; 2],
    /// `|S_- ∩ S_y|` for y = +1, -1.
    pub flipped_counts: [usize; 2],
    pub count_slack: f64,
    pub count_failures: usize,
}

impl ConcentrationReport {
    pub fn all_hold(&self) -> bool {
        self.norm_failures.is_empty()
            && self.cross_failures.is_empty()
            && self.signal_failures.is_empty()
            && self.count_failures == 0
    }
}

pub fn concentration_report(ds: &Dataset, delta: f64) -> ConcentrationReport {
    let n = ds.len() as f64;
    let d = ds.d() as f64;
    let sp2 = ds.params.sigma_p * ds.params.sigma_p;
    let norm_lower = sp2 * d / 2.0;
    let norm_upper = 3.0 * sp2 * d / 2.0;
    let cross_bound = 2.0 * sp2 * (d * (6.0 * n * n / delta).ln()).sqrt();
    let mu_norm = ds.mu_norm_sq().sqrt();
    let signal_bound = mu_norm * ds.params.sigma_p * (2.0 * (6.0 * n / delta).ln()).sqrt();

    let norms = ds.xi_norms_sq();
    let norm_failures = norms
        .iter()
        .enumerate()
        .filter(|(_, &v)| v < norm_lower || v > norm_upper)
        .map(|(i, _)| i)
        .collect();

    let mut max_cross = 0.0f64;
    let mut cross_failures = Vec::new();
    for i in 0..ds.len() {
        for k in (i + 1)..ds.len() {
            let v = ds.samples[i].xi.dot(&ds.samples[k].xi).abs();
            max_cross = max_cross.max(v);
            if v > cross_bound {
                cross_failures.push((i, k));
            }
        }
    }

    let mut max_signal = 0.0f64;
    let mut signal_failures = Vec::new();
    for (i, s) in ds.samples.iter().enumerate() {
        let v = s.xi.dot(&ds.mu).abs();
        max_signal = max_signal.max(v);
        if v > signal_bound {
            signal_failures.push(i);
        }
    }

    let mut clean_counts = [0usize; 2];
    let mut flipped_counts = [0usize; 2];
    for s in &ds.samples {
        if s.is_clean() {
            clean_counts[s.y.index()] += 1;
        } else {
            flipped_counts[s.y.index()] += 1;
        }
    }
    let count_slack = ((n / 2.0) * (8.0 / delta).ln()).sqrt();
    let p = ds.params.p;
    let clean_target = (1.0 - p) * n / 2.0;
    let flip_target = p * n / 2.0;
    let count_failures = clean_counts
        .iter()
        .filter(|&&c| (c as f64 - clean_target).abs() > count_slack)
        .count()
        + flipped_counts
            .iter()
            .filter(|&&c| (c as f64 - flip_target).abs() > count_slack)
            .count();

    ConcentrationReport {
        delta,
        norm_lower,
        norm_upper,
        norm_failures,
        cross_bound,
        max_cross,
        cross_failures,
        signal_bound,
        max_signal,
        signal_failures,
        clean_counts,
        flipped_counts,
        count_slack,
        count_failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(d: usize, p: f64) -> DataParams {
        DataParams {
            d,
            patches: 3,
            sigma_p: 1.0,
            p,
            mu_norm: 2.0,
        }
    }

    #[test]
    fn signal_is_scaled_first_basis_vector() {
        assert_eq!(make_signal(3, 0.0).unwrap().to_vec(), vec![0.0, 0.0, 0.0]);
        assert_eq!(make_signal(4, 5.0).unwrap().to_vec(), vec![5.0, 0.0, 0.0, 0.0]);
        let mu = make_signal(2, 1.0).unwrap();
        assert_eq!(mu.dot(&mu).sqrt(), 1.0);
        assert!(make_signal(0, 1.0).is_err());
    }

    #[test]
    fn patch_layout() {
        let p = params(16, 0.3);
        let mu = make_signal(16, 2.0).unwrap();
        let ds = gen_dataset(&p, mu.clone(), 50, 11).unwrap();
        for s in &ds.samples {
            let patches = s.patches(&mu, p.patches);
            for (k, patch) in patches.iter().enumerate() {
                if k == s.signal_pos {
                    assert_eq!(*patch, &mu * s.y_hat.sign());
                } else {
                    assert_eq!(*patch, s.xi);
                }
            }
            assert!(s.y == s.y_hat || s.y == s.y_hat.flip());
        }
    }

    #[test]
    fn no_flips_when_p_is_zero() {
        let p = params(8, 0.0);
        let ds = gen_dataset(&p, make_signal(8, 2.0).unwrap(), 200, 1).unwrap();
        assert!(ds.samples.iter().all(Sample::is_clean));
        let rep = concentration_report(&ds, 0.05);
        assert_eq!(rep.flipped_counts, [0, 0]);
    }

    #[test]
    fn vanishing_noise_gives_zero_noise_patches() {
        let mut p = params(8, 0.0);
        p.sigma_p = 1e-300;
        let ds = gen_dataset(&p, make_signal(8, 1.0).unwrap(), 5, 2).unwrap();
        for s in &ds.samples {
            assert!(s.xi.iter().all(|v| v.abs() < 1e-290));
        }
    }

    #[test]
    fn flip_rate_matches_p() {
        let p = DataParams {
            d: 1,
            patches: 2,
            sigma_p: 1.0,
            p: 0.2,
            mu_norm: 1.0,
        };
        let n = 100_000;
        let mut rng = stream_rng(5, &[]);
        let flips = (0..n).filter(|_| !gen_sample(&p, &mut rng).is_clean()).count();
        let rate = flips as f64 / n as f64;
        assert!((rate - 0.2).abs() <= 0.01, "rate {rate}");
    }

    #[test]
    fn same_seed_same_data_distinct_seeds_differ() {
        let p = params(32, 0.1);
        let mu = make_signal(32, 2.0).unwrap();
        let a = gen_dataset(&p, mu.clone(), 20, 9).unwrap();
        let b = gen_dataset(&p, mu.clone(), 20, 9).unwrap();
        assert_eq!(a, b);
        let c = gen_dataset(&p, mu, 20, 10).unwrap();
        assert!(a.samples.iter().zip(&c.samples).any(|(x, y)| x.xi != y.xi));
    }

    #[test]
    fn validation_names_field() {
        let mut p = params(4, 0.1);
        p.sigma_p = -1.0;
        let err = p.validate().unwrap_err().to_string();
        assert!(err.contains("sigma_p"), "{err}");
        p.sigma_p = 1.0;
        p.p = 0.5;
        assert!(p.validate().unwrap_err().to_string().contains("`p`"));
        p.p = 0.1;
        p.patches = 1;
        assert!(p.validate().unwrap_err().to_string().contains("`P`"));
    }

    #[test]
    fn concentration_bounds_in_high_dimension() {
        let p = DataParams {
            d: 10_000,
            patches: 2,
            sigma_p: 1.0,
            p: 0.0,
            mu_norm: 1.0,
        };
        let ds = gen_dataset(&p, make_signal(10_000, 1.0).unwrap(), 20, 3).unwrap();
        let rep = concentration_report(&ds, 0.05);
        assert!(rep.norm_failures.is_empty());
        assert!(rep.cross_failures.is_empty());
        assert!(rep.signal_failures.is_empty());
    }

    #[test]
    fn concentration_failures_listed_for_tiny_d() {
        let p = DataParams {
            d: 4,
            patches: 2,
            sigma_p: 1.0,
            p: 0.0,
            mu_norm: 1.0,
        };
        // Over many seeds some norm must fall outside [d/2, 3d/2] at d = 4.
        let any_fail = (0..20).any(|seed| {
            let ds = gen_dataset(&p, make_signal(4, 1.0).unwrap(), 20, seed).unwrap();
            let rep = concentration_report(&ds, 0.05);
            rep.norm_failures.iter().all(|&i| i < 20) && !rep.norm_failures.is_empty()
        });
        assert!(any_fail);
    }
}
