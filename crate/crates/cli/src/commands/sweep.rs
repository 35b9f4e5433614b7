use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::artifact::{write_json, Provenance, RunDir, Stamped};
use crate::commands::eval::run_eval;
use crate::commands::train::run_train;
use crate::config::{ConfigError, ExperimentConfig, SweepAxis};

/// One cell of the sweep table. Failed cells keep the error and leave the
/// metrics empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub seed: u64,
    pub mean_return: Option<f64>,
    pub std_return: Option<f64>,
    pub kinetic_energy: Option<f64>,
    pub bending_energy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepBody {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

/// The config of one cell along the axis.
pub fn cell_config(base: &ExperimentConfig, axis: SweepAxis, value: f64) -> ExperimentConfig {
    let mut config = base.clone();
    config.sweep = None;
    match axis {
        SweepAxis::BackboneModulus => config.arm = config.arm.with_backbone_modulus(value),
        SweepAxis::ReservoirSize => config.reservoir = config.reservoir.with_size(value as usize),
    }
    config
}

fn cell_dir(out: &Path, axis: SweepAxis, value: f64) -> PathBuf {
    let label = match axis {
        SweepAxis::BackboneModulus => format!("modulus-{value}"),
        SweepAxis::ReservoirSize => format!("size-{value}"),
    };
    out.join(label)
}

/// Trains and evaluates every (value, seed) cell in turn. A failing cell is
/// logged and recorded; the sweep moves on.
pub fn run_sweep(
    config: &ExperimentConfig,
    out: &Path,
    resume: bool,
    episodes: Option<usize>,
) -> Result<Stamped<SweepBody>> {
    let sweep = config
        .sweep
        .as_ref()
        .ok_or(ConfigError::Invalid { key: "sweep", reason: "the config has no [sweep] block".into() })?;
    std::fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    for &value in &sweep.values {
        let cell = cell_config(config, sweep.axis, value);
        let dir = cell_dir(out, sweep.axis, value);
        for &seed in &sweep.seeds {
            let outcome = run_train(&cell, &dir, seed, resume, None)
                .and_then(|run| run_eval(&run, None, episodes, true))
                .with_context(|| format!("cell {:?} = {value}, seed {seed}", sweep.axis));
            let row = match outcome {
                Ok(m) => SweepRow {
                    axis_value: value,
                    seed,
                    mean_return: Some(m.body.summary.mean),
                    std_return: Some(m.body.summary.std_dev),
                    kinetic_energy: Some(m.body.mean_kinetic_energy),
                    bending_energy: Some(m.body.mean_bending_energy),
                    error: None,
                },
                Err(e) => {
                    log::error!("{e:#}");
                    SweepRow {
                        axis_value: value,
                        seed,
                        mean_return: None,
                        std_return: None,
                        kinetic_energy: None,
                        bending_energy: None,
                        error: Some(format!("{e:#}")),
                    }
                }
            };
            rows.push(row);
        }
    }
    let summary = Stamped { provenance: Provenance::new(config, None), body: SweepBody { axis: sweep.axis, rows } };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Run directory of one sweep cell.
pub fn cell_run(out: &Path, axis: SweepAxis, value: f64, seed: u64) -> RunDir {
    RunDir::new(&cell_dir(out, axis, value), seed)
}
