use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use softarm::arm::ArmConfig;
use softarm::env::{EnvConfig, TaskConfig};
use softarm::learn::{SelfModelConfig, TrainConfig};
use softarm::reservoir::{EsnConfig, ReservoirSpec};
use thiserror::Error;

/// Version of the experiment file layout this build reads.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid config at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("unsupported schema_version {found} (this build reads {SCHEMA_VERSION})")]
    Schema { found: u32 },
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

/// Top-level experiment file. Every block except `schema_version` is
/// optional and falls back to its defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub arm: ArmConfig,
    #[serde(default)]
    pub environment: EnvironmentBlock,
    #[serde(default = "default_reservoir")]
    pub reservoir: ReservoirSpec,
    #[serde(default)]
    pub learning: TrainConfig,
    #[serde(default)]
    pub self_model: SelfModelBlock,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default)]
    pub sweep: Option<SweepBlock>,
    #[serde(default)]
    pub blind: BlindBlock,
    #[serde(default)]
    pub opcount: OpCountBlock,
}

fn default_reservoir() -> ReservoirSpec {
    ReservoirSpec::Esn(EsnConfig::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvironmentBlock {
    /// Control period, s.
    pub control_dt: f64,
    pub task: TaskConfig,
}

impl Default for EnvironmentBlock {
    fn default() -> Self {
        let env = EnvConfig::default();
        Self { control_dt: env.control_dt, task: env.task }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfModelBlock {
    /// Episodes recorded for fitting.
    pub episodes: usize,
    /// Lag-one correlation of the scripted actions.
    pub scripted_correlation: f64,
    /// Stationary standard deviation of the scripted actions.
    pub scripted_amplitude: f64,
    pub fit: SelfModelConfig,
}

impl Default for SelfModelBlock {
    fn default() -> Self {
        Self { episodes: 100, scripted_correlation: 0.8, scripted_amplitude: 0.5, fit: SelfModelConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    /// Updates between trainer checkpoints.
    pub checkpoint_every: usize,
    /// Updates between recorded evaluation traces; 0 disables traces.
    pub trace_every: usize,
    pub eval_episodes: usize,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { checkpoint_every: 10, trace_every: 50, eval_episodes: 250 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Backbone Young's modulus, Pa.
    BackboneModulus,
    ReservoirSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlindBlock {
    /// Blind intervals, s; each is compared against full sensing.
    pub intervals: Vec<f64>,
    pub trials: usize,
}

impl Default for BlindBlock {
    fn default() -> Self {
        Self { intervals: vec![0.25, 3.0], trials: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpCountBlock {
    pub sizes: Vec<usize>,
    /// Control windows in the probe sequence.
    pub windows: usize,
}

impl Default for OpCountBlock {
    fn default() -> Self {
        Self { sizes: vec![256, 512, 1024, 2048], windows: 20 }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            arm: ArmConfig::default(),
            environment: EnvironmentBlock::default(),
            reservoir: default_reservoir(),
            learning: TrainConfig::default(),
            self_model: SelfModelBlock::default(),
            output: OutputBlock::default(),
            sweep: None,
            blind: BlindBlock::default(),
            opcount: OpCountBlock::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    /// Parses TOML; errors name the offending key path.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::new(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            path: e.path().to_string(),
            message: e.into_inner().message().trim().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema { found: self.schema_version });
        }
        let invalid = |key, reason: &str| Err(ConfigError::Invalid { key, reason: reason.into() });
        if let Err(e) = self.learning.validate() {
            return invalid("learning", &e.to_string());
        }
        if self.output.checkpoint_every == 0 {
            return invalid("output.checkpoint_every", "must be at least 1");
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return invalid("sweep.values", "the sweep axis is empty");
            }
            if sweep.seeds.is_empty() {
                return invalid("sweep.seeds", "at least one seed is needed");
            }
            if sweep.axis == SweepAxis::ReservoirSize && sweep.values.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
                return invalid("sweep.values", "reservoir sizes must be positive integers");
            }
            if sweep.axis == SweepAxis::BackboneModulus && sweep.values.iter().any(|v| !(*v > 0.0)) {
                return invalid("sweep.values", "moduli must be positive");
            }
        }
        let sm = &self.self_model;
        if !(sm.scripted_correlation.abs() < 1.0) {
            return invalid("self_model.scripted_correlation", "must lie in (-1, 1)");
        }
        if !(sm.scripted_amplitude >= 0.0 && sm.scripted_amplitude.is_finite()) {
            return invalid("self_model.scripted_amplitude", "must be finite and non-negative");
        }
        if self.blind.intervals.iter().any(|v| !(*v > 0.0)) {
            return invalid("blind.intervals", "intervals must be positive");
        }
        if self.opcount.sizes.len() < 2 {
            return invalid("opcount.sizes", "a slope needs at least two sizes");
        }
        Ok(())
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig { arm: self.arm, control_dt: self.environment.control_dt, task: self.environment.task.clone() }
    }

    /// SHA-256 of the canonical JSON form: keys sorted, defaults filled in.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_value(self).expect("config serializes");
        let bytes = serde_json::to_vec(&canonical).expect("json value serializes");
        hex(&Sha256::digest(bytes))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Independent seed for one consumer of a run seed.
pub fn stream_seed(seed: u64, stream: &str) -> u64 {
    let digest = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(stream.as_bytes()).finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
