//! Readout training on a fixed reservoir: PPO for the action and value maps,
//! ridge regression for self-model maps, and blind tracking that feeds
//! self-model predictions back in place of missing target measurements.

mod blind;
mod buffer;
mod policy;
mod ppo;
mod ridge;
mod rollout;
mod selfmodel;
mod summary;
mod train;

use thiserror::Error;

pub use blind::{blind_track_step, run_blind_episode, BlindController, SensingSchedule};
pub use buffer::RolloutBuffer;
pub use policy::{gaussian_log_prob, ActionMode, ReadoutPolicy, INITIAL_LOG_STD};
pub use ppo::{ppo_loss, ppo_update, Adam, PpoConfig, PpoLoss, PpoStats};
pub use ridge::{ridge_fit, RidgeAccumulator};
pub use rollout::{
    collect_rollouts, evaluate, reservoir_input, run_episode, EnvWorker, EpisodeMetrics, RolloutSettings, Rollouts,
    WorkerSnapshot,
};
pub use selfmodel::{
    backbone_points, drive_recording, fit_self_models, pose_fractions, record_episode, EpisodeRecording,
    ScriptedActions, SelfModelConfig, SelfModelFit, SelfModelMaps, SelfModelReport,
};
pub use summary::ReturnSummary;
pub use train::{TrainConfig, Trainer, TrainerState, UpdateRecord};

use crate::env::EnvError;
use crate::reservoir::ReservoirError;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("invalid learning parameter `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("rollout buffer has an open segment; close it before computing advantages")]
    OpenSegment,
    #[error("rollout buffer is empty")]
    EmptyBuffer,
    #[error("non-finite loss in epoch {epoch}; update aborted")]
    NonFiniteLoss { epoch: usize },
    #[error("ridge system is singular at lambda = {lambda}; use lambda > 0")]
    SingularSystem { lambda: f64 },
    #[error("only {rows} usable rows, need at least {needed}")]
    InsufficientData { rows: usize, needed: usize },
    #[error("reservoir weights {got} do not match checkpoint {expected}")]
    ReservoirMismatch { expected: String, got: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Reservoir(#[from] ReservoirError),
}
