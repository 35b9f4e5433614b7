use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ActionMode, LearnError, ReadoutPolicy, RolloutBuffer};
use crate::env::{Env, EnvConfig, EnvError, EpisodeLog, EpisodeStatus, Observation, StepRecord};
use crate::reservoir::ReservoirModel;

/// Reservoir input for an observation: the target is divided by the arm
/// length so every channel is of order one.
pub fn reservoir_input(observation: &Observation, arm_length: f64) -> Vec<f64> {
    let mut input = observation.to_vec();
    input[..3].iter_mut().for_each(|x| *x /= arm_length);
    input
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutSettings {
    pub steps_per_env: usize,
    /// Multiplies environment rewards before they enter the buffer.
    pub reward_scale: f64,
    /// Discount for bootstrapping through time-limit ends.
    pub gamma: f64,
    pub mode: ActionMode,
}

/// What is needed to rebuild a worker at an episode boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerSnapshot {
    pub rng: ChaCha8Rng,
    pub episode_seed: u64,
}

/// One environment with its own copy of the reservoir state. Episodes
/// continue across rollout calls; only episode ends reset the reservoir.
#[derive(Debug, Clone)]
pub struct EnvWorker {
    env: Env,
    reservoir: ReservoirModel,
    rng: ChaCha8Rng,
    episode_seed: u64,
    features: Vec<f64>,
    episode_return: f64,
}

impl EnvWorker {
    pub fn new(env_config: &EnvConfig, reservoir: ReservoirModel, seed: u64) -> Result<Self, LearnError> {
        let snapshot = WorkerSnapshot { rng: ChaCha8Rng::seed_from_u64(seed), episode_seed: 0 };
        let mut worker = Self::build(env_config, reservoir, snapshot)?;
        worker.start_episode()?;
        Ok(worker)
    }

    /// Rebuilds a worker from a snapshot taken at an episode start.
    pub fn restore(
        env_config: &EnvConfig,
        reservoir: ReservoirModel,
        snapshot: WorkerSnapshot,
    ) -> Result<Self, LearnError> {
        let mut worker = Self::build(env_config, reservoir, snapshot)?;
        worker.begin(worker.episode_seed)?;
        Ok(worker)
    }

    fn build(
        env_config: &EnvConfig,
        mut reservoir: ReservoirModel,
        snapshot: WorkerSnapshot,
    ) -> Result<Self, LearnError> {
        reservoir.reset();
        Ok(Self {
            env: Env::new(env_config)?,
            features: vec![0.0; reservoir.size()],
            reservoir,
            rng: snapshot.rng,
            episode_seed: snapshot.episode_seed,
            episode_return: 0.0,
        })
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn reservoir(&self) -> &ReservoirModel {
        &self.reservoir
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn at_episode_start(&self) -> bool {
        self.env.step_count() == 0 && self.env.status() == EpisodeStatus::Running
    }

    pub fn snapshot(&self) -> WorkerSnapshot {
        WorkerSnapshot { rng: self.rng.clone(), episode_seed: self.episode_seed }
    }

    fn start_episode(&mut self) -> Result<(), LearnError> {
        let seed = self.rng.gen();
        self.begin(seed)
    }

    fn begin(&mut self, seed: u64) -> Result<(), LearnError> {
        self.episode_seed = seed;
        let observation = self.env.reset(seed)?;
        self.reservoir.reset();
        self.observe(&observation)?;
        self.episode_return = 0.0;
        Ok(())
    }

    fn observe(&mut self, observation: &Observation) -> Result<(), LearnError> {
        let input = reservoir_input(observation, self.env.config().arm.backbone.length);
        self.features.copy_from_slice(self.reservoir.drive(&input)?);
        Ok(())
    }

    /// Runs `settings.steps_per_env` control steps and returns their
    /// transitions as one closed segment, plus the raw returns of episodes
    /// that finished along the way.
    pub fn collect(
        &mut self,
        policy: &ReadoutPolicy,
        settings: &RolloutSettings,
    ) -> Result<(RolloutBuffer, Vec<f64>), LearnError> {
        let mut buffer = RolloutBuffer::new(policy.n_features(), policy.n_actions());
        let mut finished = Vec::new();
        for _ in 0..settings.steps_per_env {
            let value = policy.value(&self.features);
            let (action, log_prob) = policy.act(&self.features, settings.mode, &mut self.rng);
            let before = std::mem::take(&mut self.features);
            self.features = vec![0.0; before.len()];
            match self.env.step(&action) {
                Ok(outcome) => {
                    self.episode_return += outcome.reward;
                    let mut reward = settings.reward_scale * outcome.reward;
                    self.observe(&outcome.observation)?;
                    if outcome.done {
                        // Time limit, not a terminal state: bootstrap from
                        // the state the episode was cut at.
                        reward += settings.gamma * policy.value(&self.features);
                        finished.push(self.episode_return);
                        self.start_episode()?;
                    }
                    buffer.push(&before, &action, log_prob, reward, value, outcome.done)?;
                }
                Err(EnvError::Diverged { time, source }) => {
                    log::warn!("environment diverged at t = {time:.3} s ({source}); episode reset");
                    buffer.push(&before, &action, log_prob, 0.0, value, true)?;
                    self.start_episode()?;
                }
                Err(e) => return Err(e.into()),
            }
        }
        buffer.end_segment(policy.value(&self.features));
        Ok((buffer, finished))
    }
}

/// Transitions from every worker plus finished-episode returns.
#[derive(Debug, Clone)]
pub struct Rollouts {
    pub buffer: RolloutBuffer,
    pub episode_returns: Vec<f64>,
}

/// Steps every worker for `settings.steps_per_env` control steps, in
/// parallel. Results are merged in worker order, so they do not depend on
/// the thread count.
pub fn collect_rollouts(
    workers: &mut [EnvWorker],
    policy: &ReadoutPolicy,
    settings: &RolloutSettings,
) -> Result<Rollouts, LearnError> {
    let parts: Vec<_> = workers.par_iter_mut().map(|w| w.collect(policy, settings)).collect();
    let mut buffer = RolloutBuffer::new(policy.n_features(), policy.n_actions());
    let mut episode_returns = Vec::new();
    for part in parts {
        let (b, returns) = part?;
        buffer.append(b)?;
        episode_returns.extend(returns);
    }
    Ok(Rollouts { buffer, episode_returns })
}

/// Per-episode evaluation result. Energies are backbone time averages over
/// the control steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub seed: u64,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub kinetic_energy: f64,
    pub bending_energy: f64,
    pub steps: usize,
    pub diverged: bool,
}

/// Runs one full episode from `env.reset(seed)`. Stochastic actions draw
/// from `rng`.
pub fn run_episode<R: Rng>(
    env: &mut Env,
    reservoir: &mut ReservoirModel,
    policy: &ReadoutPolicy,
    mode: ActionMode,
    seed: u64,
    rng: &mut R,
    mut log: Option<&mut EpisodeLog>,
) -> Result<EpisodeMetrics, LearnError> {
    let arm_length = env.config().arm.backbone.length;
    let mut observation = env.reset(seed)?;
    reservoir.reset();
    let mut metrics = EpisodeMetrics {
        seed,
        episode_return: 0.0,
        kinetic_energy: 0.0,
        bending_energy: 0.0,
        steps: 0,
        diverged: false,
    };
    loop {
        let features = reservoir.drive(&reservoir_input(&observation, arm_length))?;
        let (action, _) = policy.act(features, mode, rng);
        let outcome = match env.step(&action) {
            Ok(o) => o,
            Err(EnvError::Diverged { time, source }) => {
                log::warn!("evaluation episode {seed} diverged at t = {time:.3} s ({source})");
                metrics.diverged = true;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let energies = env.backbone_energies()?;
        metrics.episode_return += outcome.reward;
        metrics.kinetic_energy += energies.kinetic + energies.rotational;
        metrics.bending_energy += energies.bending;
        metrics.steps += 1;
        if let Some(log) = log.as_deref_mut() {
            log.record(&StepRecord {
                t: env.time(),
                observation: observation.to_vec(),
                action: action.clone(),
                reward: outcome.reward,
                tip: env.tip().into(),
                energies,
            })?;
        }
        observation = outcome.observation;
        if outcome.done {
            break;
        }
    }
    if metrics.steps > 0 {
        metrics.kinetic_energy /= metrics.steps as f64;
        metrics.bending_energy /= metrics.steps as f64;
    }
    if let Some(log) = log {
        log.flush()?;
    }
    Ok(metrics)
}

/// Evaluates `policy` on one episode per seed, in parallel. Stochastic
/// evaluation seeds each episode's noise from `(noise_seed, seed)`.
pub fn evaluate(
    env_config: &EnvConfig,
    reservoir: &ReservoirModel,
    policy: &ReadoutPolicy,
    seeds: &[u64],
    mode: ActionMode,
    noise_seed: u64,
) -> Result<Vec<EpisodeMetrics>, LearnError> {
    let env = Env::new(env_config)?;
    seeds
        .par_iter()
        .map(|&seed| {
            let mut env = env.clone();
            let mut reservoir = reservoir.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed ^ seed.rotate_left(32));
            run_episode(&mut env, &mut reservoir, policy, mode, seed, &mut rng, None)
        })
        .collect()
}
