use std::path::Path;

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};
use softarm::reservoir::{count_ops, loglog_slope, probe_inputs, EsnConfig, OpCount, ReservoirSpec, SpikingConfig};

use crate::artifact::{write_json, Provenance, Stamped};
use crate::config::{stream_seed, ExperimentConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpCountBody {
    pub rows: Vec<OpCount>,
    /// Log-log slopes of operations against size.
    pub esn_exponent: f64,
    pub esn_dense_exponent: f64,
    pub spiking_exponent: f64,
}

/// Operation counts of both reservoir kinds over the configured sizes. The
/// configured reservoir supplies the parameters of its own kind; the other
/// kind uses defaults.
pub fn run_opcount(config: &ExperimentConfig, out: &Path, seed: u64) -> Result<Stamped<OpCountBody>> {
    let (esn, spiking) = match &config.reservoir {
        ReservoirSpec::Esn(c) => (c.clone(), SpikingConfig { input_dim: c.input_dim, ..SpikingConfig::default() }),
        ReservoirSpec::Spiking(c) => (EsnConfig { input_dim: c.input_dim, ..EsnConfig::default() }, c.clone()),
    };
    if config.opcount.windows < 2 {
        bail!("opcount.windows must be at least 2: the first spiking window is a warm-up");
    }
    let inputs = probe_inputs(esn.input_dim, config.opcount.windows);
    let rows = count_ops(&config.opcount.sizes, &esn, &spiking, stream_seed(seed, "reservoir"), &inputs)?;
    let sizes: Vec<f64> = rows.iter().map(|r| r.size as f64).collect();
    let esn_ops: Vec<f64> = rows.iter().map(|r| r.esn_ops as f64).collect();
    let esn_dense_ops: Vec<f64> = rows.iter().map(|r| r.esn_dense_ops as f64).collect();
    let spiking_ops: Vec<f64> = rows.iter().map(|r| r.spiking_ops).collect();
    let body = OpCountBody {
        esn_exponent: loglog_slope(&sizes, &esn_ops),
        esn_dense_exponent: loglog_slope(&sizes, &esn_dense_ops),
        spiking_exponent: loglog_slope(&sizes, &spiking_ops),
        rows,
    };
    std::fs::create_dir_all(out)?;
    let artifact = Stamped { provenance: Provenance::new(config, Some(seed)), body };
    write_json(&out.join("opcount.json"), &artifact)?;
    Ok(artifact)
}
