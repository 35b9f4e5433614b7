use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{
    init_esn, init_spiking, read_checkpoint, write_esn, write_spiking, Checkpoint, EchoStateReservoir, EsnConfig,
    ReservoirError, SpikingConfig, SpikingReservoir,
};

/// Which reservoir to build, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReservoirSpec {
    Esn(EsnConfig),
    Spiking(SpikingConfig),
}

impl ReservoirSpec {
    pub fn size(&self) -> usize {
        match self {
            ReservoirSpec::Esn(c) => c.size,
            ReservoirSpec::Spiking(c) => c.size,
        }
    }

    pub fn with_size(&self, size: usize) -> Self {
        let mut spec = self.clone();
        match &mut spec {
            ReservoirSpec::Esn(c) => c.size = size,
            ReservoirSpec::Spiking(c) => c.size = size,
        }
        spec
    }

    pub fn build(&self, seed: u64) -> Result<ReservoirModel, ReservoirError> {
        Ok(match self {
            ReservoirSpec::Esn(c) => ReservoirModel::from(init_esn(c, seed)?),
            ReservoirSpec::Spiking(c) => ReservoirModel::from(init_spiking(c, seed)?),
        })
    }
}

/// A reservoir seen as a feature map: each control step it is driven by one
/// input vector and exposes a state vector `u_r` of length `size()`.
///
/// Spiking features are the window spike counts divided by the per-window
/// bound, so they lie in `[0, 1]` like rates.
#[derive(Debug, Clone)]
pub enum ReservoirModel {
    EchoState(EchoStateReservoir),
    Spiking { reservoir: SpikingReservoir, features: Vec<f64> },
}

impl From<EchoStateReservoir> for ReservoirModel {
    fn from(res: EchoStateReservoir) -> Self {
        ReservoirModel::EchoState(res)
    }
}

impl From<SpikingReservoir> for ReservoirModel {
    fn from(reservoir: SpikingReservoir) -> Self {
        let features = vec![0.0; reservoir.size()];
        ReservoirModel::Spiking { reservoir, features }
    }
}

impl From<Checkpoint> for ReservoirModel {
    fn from(checkpoint: Checkpoint) -> Self {
        match checkpoint {
            Checkpoint::EchoState(r) => r.into(),
            Checkpoint::Spiking(r) => r.into(),
        }
    }
}

impl ReservoirModel {
    pub fn size(&self) -> usize {
        match self {
            ReservoirModel::EchoState(r) => r.size(),
            ReservoirModel::Spiking { reservoir, .. } => reservoir.size(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ReservoirModel::EchoState(r) => r.input_dim(),
            ReservoirModel::Spiking { reservoir, .. } => reservoir.config().input_dim,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ReservoirModel::EchoState(r) => r.seed(),
            ReservoirModel::Spiking { reservoir, .. } => reservoir.seed(),
        }
    }

    pub fn spec(&self) -> ReservoirSpec {
        match self {
            ReservoirModel::EchoState(r) => ReservoirSpec::Esn(r.config().clone()),
            ReservoirModel::Spiking { reservoir, .. } => ReservoirSpec::Spiking(reservoir.config().clone()),
        }
    }

    /// Clears the dynamic state; weights are untouched.
    pub fn reset(&mut self) {
        match self {
            ReservoirModel::EchoState(r) => r.reset(),
            ReservoirModel::Spiking { reservoir, features } => {
                reservoir.reset();
                features.fill(0.0);
            }
        }
    }

    /// Advances one control step and returns the new state vector.
    pub fn drive(&mut self, input: &[f64]) -> Result<&[f64], ReservoirError> {
        match self {
            ReservoirModel::EchoState(r) => Ok(r.step(input)?.as_slice()),
            ReservoirModel::Spiking { reservoir, features } => {
                let cap = reservoir.config().lif.max_spikes_per_window() as f64;
                let counts = reservoir.forward(input)?;
                for (f, &c) in features.iter_mut().zip(counts) {
                    *f = c as f64 / cap;
                }
                Ok(features)
            }
        }
    }

    /// Synapse activations of the most recent step.
    pub fn last_step_ops(&self) -> u64 {
        match self {
            ReservoirModel::EchoState(r) => r.ops_per_step(),
            ReservoirModel::Spiking { reservoir, .. } => reservoir.last_ops().recurrent,
        }
    }

    pub fn weights_digest(&self) -> [u8; 32] {
        match self {
            ReservoirModel::EchoState(r) => r.weights_digest(),
            ReservoirModel::Spiking { reservoir, .. } => reservoir.weights_digest(),
        }
    }

    pub fn write<W: Write>(&self, out: &mut W) -> Result<(), ReservoirError> {
        match self {
            ReservoirModel::EchoState(r) => write_esn(out, r),
            ReservoirModel::Spiking { reservoir, .. } => write_spiking(out, reservoir),
        }
    }

    pub fn read<R: Read>(input: R) -> Result<Self, ReservoirError> {
        Ok(read_checkpoint(input)?.into())
    }
}

/// Lowercase hex of a weight digest.
pub fn digest_hex(digest: &[u8; 32]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
