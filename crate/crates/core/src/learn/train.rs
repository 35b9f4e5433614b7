use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    collect_rollouts, ppo_update, ActionMode, Adam, EnvWorker, LearnError, PpoConfig, PpoStats, ReadoutPolicy,
    RolloutSettings, WorkerSnapshot,
};
use crate::arm::N_MUSCLES;
use crate::env::EnvConfig;
use crate::reservoir::{digest_hex, ReservoirModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub n_envs: usize,
    /// Control steps each environment contributes per update.
    pub steps_per_env: usize,
    pub updates: usize,
    /// Multiplies environment rewards before advantage estimation.
    pub reward_scale: f64,
    pub ppo: PpoConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { n_envs: 8, steps_per_env: 40, updates: 200, reward_scale: 100.0, ppo: PpoConfig::default() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        if self.n_envs == 0 || self.steps_per_env == 0 {
            return Err(LearnError::InvalidConfig {
                field: "n_envs",
                reason: "environment count and steps per environment must be positive".into(),
            });
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return Err(LearnError::InvalidConfig { field: "reward_scale", reason: "must be positive".into() });
        }
        self.ppo.validate()
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update: usize,
    pub transitions: usize,
    pub episodes_finished: usize,
    /// Mean raw return of episodes that finished during this update's
    /// collection.
    pub mean_return: Option<f64>,
    /// `None` if the update was aborted on a non-finite loss.
    pub stats: Option<PpoStats>,
}

/// Everything needed to continue training exactly, valid only while every
/// worker sits at an episode start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub update: usize,
    pub reservoir_digest: String,
    pub policy: ReadoutPolicy,
    pub optimizer: Adam,
    pub rng: ChaCha8Rng,
    pub workers: Vec<WorkerSnapshot>,
}

/// Alternates parallel rollout collection with exclusive PPO updates.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    reservoir: ReservoirModel,
    policy: ReadoutPolicy,
    optimizer: Adam,
    rng: ChaCha8Rng,
    workers: Vec<EnvWorker>,
    update: usize,
}

impl Trainer {
    pub fn new(
        env_config: &EnvConfig,
        config: &TrainConfig,
        reservoir: ReservoirModel,
        seed: u64,
    ) -> Result<Self, LearnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let workers = (0..config.n_envs)
            .map(|_| EnvWorker::new(env_config, reservoir.clone(), rng.gen()))
            .collect::<Result<Vec<_>, _>>()?;
        let policy = ReadoutPolicy::new(reservoir.size(), N_MUSCLES);
        let optimizer = Adam::new(&policy, config.ppo.learning_rate, config.ppo.adam_epsilon);
        Ok(Self { config: config.clone(), reservoir, policy, optimizer, rng, workers, update: 0 })
    }

    pub fn restore(
        env_config: &EnvConfig,
        config: &TrainConfig,
        reservoir: ReservoirModel,
        state: TrainerState,
    ) -> Result<Self, LearnError> {
        config.validate()?;
        let digest = digest_hex(&reservoir.weights_digest());
        if digest != state.reservoir_digest {
            return Err(LearnError::ReservoirMismatch { expected: state.reservoir_digest, got: digest });
        }
        if state.workers.len() != config.n_envs {
            return Err(LearnError::DimensionMismatch { expected: config.n_envs, got: state.workers.len() });
        }
        let workers = state
            .workers
            .into_iter()
            .map(|snap| EnvWorker::restore(env_config, reservoir.clone(), snap))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            config: config.clone(),
            reservoir,
            policy: state.policy,
            optimizer: state.optimizer,
            rng: state.rng,
            workers,
            update: state.update,
        })
    }

    pub fn policy(&self) -> &ReadoutPolicy {
        &self.policy
    }

    pub fn reservoir(&self) -> &ReservoirModel {
        &self.reservoir
    }

    pub fn updates_done(&self) -> usize {
        self.update
    }

    pub fn is_finished(&self) -> bool {
        self.update >= self.config.updates
    }

    /// Resumable state, if every worker is at an episode start.
    pub fn state(&self) -> Option<TrainerState> {
        if !self.workers.iter().all(EnvWorker::at_episode_start) {
            return None;
        }
        Some(TrainerState {
            update: self.update,
            reservoir_digest: digest_hex(&self.reservoir.weights_digest()),
            policy: self.policy.clone(),
            optimizer: self.optimizer.clone(),
            rng: self.rng.clone(),
            workers: self.workers.iter().map(EnvWorker::snapshot).collect(),
        })
    }

    /// Collects one round of rollouts and applies one PPO update. A
    /// non-finite loss drops the round and training continues.
    pub fn step(&mut self) -> Result<UpdateRecord, LearnError> {
        let settings = RolloutSettings {
            steps_per_env: self.config.steps_per_env,
            reward_scale: self.config.reward_scale,
            gamma: self.config.ppo.gamma,
            mode: ActionMode::Stochastic,
        };
        let mut rollouts = collect_rollouts(&mut self.workers, &self.policy, &settings)?;
        let transitions = rollouts.buffer.len();
        let stats = match ppo_update(
            &mut rollouts.buffer,
            &mut self.policy,
            &mut self.optimizer,
            &self.config.ppo,
            &mut self.rng,
        ) {
            Ok(s) => Some(s),
            Err(LearnError::NonFiniteLoss { epoch }) => {
                log::error!("update {} dropped: non-finite loss in epoch {epoch}", self.update);
                None
            }
            Err(e) => return Err(e),
        };
        let returns = &rollouts.episode_returns;
        let record = UpdateRecord {
            update: self.update,
            transitions,
            episodes_finished: returns.len(),
            mean_return: (!returns.is_empty()).then(|| returns.iter().sum::<f64>() / returns.len() as f64),
            stats,
        };
        self.update += 1;
        Ok(record)
    }
}
