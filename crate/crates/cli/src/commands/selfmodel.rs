use std::fs;
use std::path::Path;

use anyhow::{bail, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use softarm::env::Env;
use softarm::learn::{
    fit_self_models, record_episode, reservoir_input, ActionMode, EpisodeRecording, ReadoutPolicy, ScriptedActions,
    SelfModelMaps, SelfModelReport,
};
use softarm::reservoir::{digest_hex, ReservoirModel};

use crate::artifact::{read_json, write_json, Provenance, RunDir, Stamped};
use crate::commands::eval::{load_trained, run_config};
use crate::config::{stream_seed, ExperimentConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Correlated random actions.
    Scripted,
    /// The run's trained policy with exploration noise.
    Policy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelfModelBody {
    pub source: DataSource,
    pub reservoir_digest: String,
    pub episodes: usize,
    pub report: SelfModelReport,
    pub maps: SelfModelMaps,
}

/// Records episodes in parallel, one controller per episode.
pub fn record_dataset<C, F>(
    env: &Env,
    seeds: &[u64],
    pose_points: usize,
    make_controller: F,
) -> Result<Vec<EpisodeRecording>>
where
    F: Fn(u64) -> C + Sync,
    C: FnMut(usize, &softarm::env::Observation) -> Vec<f64>,
{
    seeds
        .par_iter()
        .map(|&seed| Ok(record_episode(&mut env.clone(), seed, pose_points, make_controller(seed))?))
        .collect()
}

fn policy_controller(
    policy: &ReadoutPolicy,
    reservoir: &ReservoirModel,
    arm_length: f64,
    noise_seed: u64,
) -> impl FnMut(usize, &softarm::env::Observation) -> Vec<f64> {
    let policy = policy.clone();
    let mut reservoir = reservoir.clone();
    reservoir.reset();
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    move |_, obs| {
        let features = reservoir.drive(&reservoir_input(obs, arm_length)).expect("observation has the input width");
        policy.act(features, ActionMode::Stochastic, &mut rng).0
    }
}

/// Fits self-model maps for the run `out/seed-N`: on its trained policy's
/// behavior if the run has one, otherwise on scripted actions through a
/// fresh reservoir.
pub fn run_selfmodel_fit(
    config: Option<&ExperimentConfig>,
    out: &Path,
    seed: u64,
    episodes: Option<usize>,
) -> Result<Stamped<SelfModelBody>> {
    let run = RunDir::new(out, seed);
    fs::create_dir_all(&run.root)?;
    let config = match config {
        Some(c) => c.clone(),
        None if run.config().exists() => run_config(&run, None)?,
        None => ExperimentConfig::default(),
    };
    let block = &config.self_model;
    let n = episodes.unwrap_or(block.episodes);
    if n < 2 {
        bail!("self-model fitting needs at least two episodes for the held-out split");
    }
    let base = stream_seed(seed, "selfmodel-episodes");
    let seeds: Vec<u64> = (0..n as u64).map(|i| base.wrapping_add(i)).collect();

    let (source, reservoir, recordings) = if run.policy().exists() {
        let (policy, reservoir) = load_trained(&run)?;
        let env = Env::new(&config.env_config())?;
        let arm_length = config.arm.backbone.length;
        let recordings = record_dataset(&env, &seeds, block.fit.pose_points, |s| {
            policy_controller(&policy.body.policy, &reservoir, arm_length, s)
        })?;
        (DataSource::Policy, reservoir, recordings)
    } else {
        let reservoir = config.reservoir.build(stream_seed(seed, "reservoir"))?;
        run.write_reservoir(&reservoir)?;
        let env = Env::new(&config.env_config())?;
        let (correlation, amplitude) = (block.scripted_correlation, block.scripted_amplitude);
        let recordings = record_dataset(&env, &seeds, block.fit.pose_points, |s| {
            let mut script = ScriptedActions::new(s, correlation, amplitude);
            move |_, _: &softarm::env::Observation| script.next_action().to_vec()
        })?;
        (DataSource::Scripted, reservoir, recordings)
    };

    let fit = fit_self_models(&recordings, &reservoir, &config.self_model.fit, config.arm.backbone.length)?;
    log::info!(
        "self-model: pose error {:.4}, target errors {:?}, tip errors {:?}",
        fit.report.pose_error,
        fit.report.target_errors,
        fit.report.tip_errors
    );
    let artifact = Stamped {
        provenance: Provenance::new(&config, Some(seed)),
        body: SelfModelBody {
            source,
            reservoir_digest: digest_hex(&reservoir.weights_digest()),
            episodes: n,
            report: fit.report,
            maps: fit.maps,
        },
    };
    write_json(&run.self_model(), &artifact)?;
    Ok(artifact)
}

pub fn load_self_model(run: &RunDir, reservoir: &ReservoirModel) -> Result<SelfModelMaps> {
    let artifact: Stamped<SelfModelBody> = read_json(&run.self_model())?;
    let digest = digest_hex(&reservoir.weights_digest());
    if artifact.body.reservoir_digest != digest {
        bail!("self-model in {} was fitted on a different reservoir", run.root.display());
    }
    Ok(artifact.body.maps)
}
