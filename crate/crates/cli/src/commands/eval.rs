use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};
use softarm::learn::{evaluate, ActionMode, EpisodeMetrics, ReturnSummary};
use softarm::reservoir::digest_hex;

use crate::artifact::{read_json, write_json, Provenance, RunDir, Stamped};
use crate::commands::eval_seeds;
use crate::commands::train::{ConfigBody, PolicyBody};
use crate::config::{stream_seed, ExperimentConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsBody {
    /// Config the policy was trained under.
    pub policy_config_hash: String,
    pub deterministic: bool,
    pub summary: ReturnSummary,
    pub mean_kinetic_energy: f64,
    pub mean_bending_energy: f64,
    pub diverged: usize,
    pub episodes: Vec<EpisodeMetrics>,
}

/// Loads a trained policy with its reservoir, refusing mismatched pairs.
pub fn load_trained(run: &RunDir) -> Result<(Stamped<PolicyBody>, softarm::reservoir::ReservoirModel)> {
    let policy: Stamped<PolicyBody> = read_json(&run.policy())?;
    let reservoir = run.read_reservoir()?;
    let digest = digest_hex(&reservoir.weights_digest());
    if digest != policy.body.reservoir_digest {
        bail!(
            "policy in {} was trained on reservoir {} but reservoir.bin hashes to {digest}",
            run.root.display(),
            policy.body.reservoir_digest
        );
    }
    if policy.body.policy.n_features() != reservoir.size() {
        bail!("policy expects {} features, reservoir has {}", policy.body.policy.n_features(), reservoir.size());
    }
    Ok((policy, reservoir))
}

/// Config of a run: an explicit override or the one it was trained with.
pub fn run_config(run: &RunDir, override_config: Option<&ExperimentConfig>) -> Result<ExperimentConfig> {
    match override_config {
        Some(c) => Ok(c.clone()),
        None => Ok(read_json::<Stamped<ConfigBody>>(&run.config())?.body.config),
    }
}

pub fn run_eval(
    run: &RunDir,
    override_config: Option<&ExperimentConfig>,
    episodes: Option<usize>,
    deterministic: bool,
) -> Result<Stamped<MetricsBody>> {
    let (policy, reservoir) = load_trained(run)?;
    let config = run_config(run, override_config)?;
    let seed = policy.provenance.seed;
    let n = episodes.unwrap_or(config.output.eval_episodes);
    let mode = if deterministic { ActionMode::Deterministic } else { ActionMode::Stochastic };
    let noise_seed = stream_seed(seed.unwrap_or(0), "eval-noise");
    let rows = evaluate(&config.env_config(), &reservoir, &policy.body.policy, &eval_seeds(n), mode, noise_seed)?;
    let returns: Vec<f64> = rows.iter().map(|m| m.episode_return).collect();
    let mean_of = |f: fn(&EpisodeMetrics) -> f64| rows.iter().map(f).sum::<f64>() / rows.len().max(1) as f64;
    let metrics = Stamped {
        provenance: Provenance::new(&config, seed),
        body: MetricsBody {
            policy_config_hash: policy.provenance.config_hash,
            deterministic,
            summary: ReturnSummary::of(&returns),
            mean_kinetic_energy: mean_of(|m| m.kinetic_energy),
            mean_bending_energy: mean_of(|m| m.bending_energy),
            diverged: rows.iter().filter(|m| m.diverged).count(),
            episodes: rows,
        },
    };
    write_json(&run.metrics(), &metrics)?;
    Ok(metrics)
}
