//! TOML run configuration shared by the command-line subcommands.
//!
//! A single-run file looks like:
//!
//! ```toml
//! seed = 1
//!
//! [data]
//! d = 1000
//! P = 2
//! n = 20
//! sigma_p = 1.0
//! p = 0.0
//! mu_norm = 10.0
//!
//! [net]
//! m = 10
//! init = "uniform_fan_in"   # or "gaussian" with sigma_0
//!
//! [train]
//! algo = "sgd"              # or "sam" with tau
//! eta = 0.01
//! batch_size = 20
//! epochs = 100
//!
//! [hooks]
//! track_decomposition = true
//! oracle_check = false
//! ```
//!
//! Unknown keys anywhere are rejected. The base seed seeds the dataset and,
//! through separate derived streams, the initialization and batch shuffles.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DataParams;
use crate::error::{invalid, Error, Result};
use crate::network::{InitScheme, NetConfig};
use crate::optim::{Algorithm, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub d: usize,
    #[serde(rename = "P", default = "default_patches")]
    pub patches: usize,
    pub n: usize,
    pub sigma_p: f64,
    #[serde(default)]
    pub p: f64,
    pub mu_norm: f64,
}

pub fn default_patches() -> usize {
    2
}

impl DataSection {
    pub fn params(&self) -> DataParams {
        DataParams {
            d: self.d,
            patches: self.patches,
            sigma_p: self.sigma_p,
            p: self.p,
            mu_norm: self.mu_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    pub m: usize,
    pub init: InitScheme,
    #[serde(default)]
    pub sigma_0: f64,
}

impl NetSection {
    pub fn net_config(&self, d: usize) -> NetConfig {
        NetConfig {
            m: self.m,
            d,
            init: self.init,
            sigma_0: self.sigma_0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub algo: Algorithm,
    pub eta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub tau: f64,
    #[serde(default)]
    pub record_every: usize,
    #[serde(default)]
    pub sam_until: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HookSection {
    #[serde(default = "yes")]
    pub track_decomposition: bool,
    #[serde(default)]
    pub oracle_check: bool,
    #[serde(default = "yes")]
    pub record_alignment: bool,
    #[serde(default)]
    pub record_sam_probes: bool,
    #[serde(default)]
    pub record_weights: bool,
}

fn yes() -> bool {
    true
}

impl Default for HookSection {
    fn default() -> Self {
        HookSection {
            track_decomposition: true,
            oracle_check: false,
            record_alignment: true,
            record_sam_probes: false,
            record_weights: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataSection,
    pub net: NetSection,
    pub train: TrainSection,
    #[serde(default)]
    pub hooks: HookSection,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.params().validate()?;
        if self.data.n == 0 {
            return Err(invalid("n", "need at least one training sample"));
        }
        self.net.net_config(self.data.d).validate()?;
        self.train_config().validate(self.data.n)?;
        Ok(())
    }

    pub fn net_config(&self) -> NetConfig {
        self.net.net_config(self.data.d)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            eta: self.train.eta,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            algo: self.train.algo,
            tau: self.train.tau,
            seed: self.seed,
            record_every: self.train.record_every,
            sam_until: self.train.sam_until,
            record_weights: self.hooks.record_weights,
            record_alignment: self.hooks.record_alignment,
            record_sam_probes: self.hooks.record_sam_probes,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub fn parse_toml<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn load_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Everything needed to reproduce a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub base_seed: u64,
    /// Resolved configuration, re-serialized as TOML.
    pub config: String,
    pub started_unix: u64,
    pub outputs: Vec<String>,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, base_seed: u64, config: String, outputs: Vec<String>) -> Self {
        let started_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            base_seed,
            config,
            started_unix,
            outputs,
            notes: standard_notes(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        crate::io::write_atomic(&dir.join("manifest.json"), json.as_bytes())
    }
}

/// Modelling conventions recorded with every run.
pub fn standard_notes() -> Vec<String> {
    vec![
        "relu'(0) = 1 in all gradients and activation indicators".into(),
        "uniform_fan_in init draws U(-1/sqrt(d), 1/sqrt(d)), matching the common framework default for fan-in d".into(),
        "P defaults to 2 when not given".into(),
        "after a SAM-to-SGD phase switch, SGD keeps drawing fresh shuffles each epoch".into(),
        "test samples place the signal patch uniformly at random, as in training".into(),
        "sign(0) counts as a classification error".into(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 3
[data]
d = 50
n = 4
sigma_p = 1.0
mu_norm = 2.0
[net]
m = 2
init = "gaussian"
sigma_0 = 0.01
[train]
algo = "sam"
eta = 0.1
batch_size = 2
epochs = 5
tau = 0.05
"#;

    #[test]
    fn parses_with_defaults() {
        let c: RunConfig = parse_toml(BASE).unwrap();
        c.validate().unwrap();
        assert_eq!(c.data.patches, 2);
        assert_eq!(c.train.algo, Algorithm::Sam);
        assert!(c.hooks.track_decomposition);
        let again: RunConfig = parse_toml(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = BASE.replace("mu_norm = 2.0", "mu_norm = 2.0\nmu_nrom = 3.0");
        let err = parse_toml::<RunConfig>(&text).unwrap_err().to_string();
        assert!(err.contains("mu_nrom"), "{err}");
    }

    #[test]
    fn negative_noise_names_field() {
        let text = BASE.replace("sigma_p = 1.0", "sigma_p = -1.0");
        let c: RunConfig = parse_toml(&text).unwrap();
        assert!(c.validate().unwrap_err().to_string().contains("sigma_p"));
    }

    #[test]
    fn indivisible_batch_rejected() {
        let text = BASE.replace("batch_size = 2", "batch_size = 3");
        let c: RunConfig = parse_toml(&text).unwrap();
        assert!(matches!(c.validate(), Err(Error::BatchDoesNotDivide { .. })));
    }
}
