use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{reservoir_input, ActionMode, EpisodeMetrics, LearnError, ReadoutPolicy, SelfModelMaps};
use crate::env::{Env, EnvError, Observation};
use crate::reservoir::ReservoirModel;

/// When the target is visible: always, or alternately visible and hidden
/// for `interval` seconds each, starting visible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SensingSchedule {
    Always,
    Alternating { interval: f64 },
}

impl SensingSchedule {
    pub fn available(&self, t: f64) -> bool {
        match *self {
            SensingSchedule::Always => true,
            // The small offset keeps exact multiples of the interval on the
            // side they start.
            SensingSchedule::Alternating { interval } => ((t + 1e-9) / interval).floor() as u64 % 2 == 0,
        }
    }
}

/// Policy plus self-model on one reservoir. While the target is hidden, its
/// one-step prediction from the previous reservoir state takes the place of
/// the measurement, so long gaps chain one-step predictions. Curvature is
/// always measured.
#[derive(Debug, Clone)]
pub struct BlindController {
    policy: ReadoutPolicy,
    reservoir: ReservoirModel,
    maps: SelfModelMaps,
    arm_length: f64,
    features: Vec<f64>,
}

impl BlindController {
    pub fn new(
        policy: ReadoutPolicy,
        reservoir: ReservoirModel,
        maps: SelfModelMaps,
        arm_length: f64,
    ) -> Result<Self, LearnError> {
        if !maps.horizons.contains(&1) {
            return Err(LearnError::InvalidConfig {
                field: "horizons",
                reason: "blind tracking needs a one-step target map".into(),
            });
        }
        if maps.w_target_future.ncols() != reservoir.size() || policy.n_features() != reservoir.size() {
            return Err(LearnError::DimensionMismatch {
                expected: reservoir.size(),
                got: maps.w_target_future.ncols(),
            });
        }
        let features = vec![0.0; reservoir.size()];
        Ok(Self { policy, reservoir, maps, arm_length, features })
    }

    pub fn reset(&mut self) {
        self.reservoir.reset();
        self.features.fill(0.0);
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Feeds one observation, substituting the predicted target if sensing is
    /// unavailable, and returns the policy's action.
    pub fn act<R: Rng>(
        &mut self,
        observation: &Observation,
        sensing_available: bool,
        mode: ActionMode,
        rng: &mut R,
    ) -> Result<Vec<f64>, LearnError> {
        let mut seen = *observation;
        if !sensing_available {
            let predicted = self.maps.predict_target(&self.features, 1).expect("checked at construction");
            seen.target = predicted.into();
        }
        let input = reservoir_input(&seen, self.arm_length);
        self.features.copy_from_slice(self.reservoir.drive(&input)?);
        Ok(self.policy.act(&self.features, mode, rng).0)
    }
}

/// One deterministic control step of the blind-tracking controller.
pub fn blind_track_step(
    controller: &mut BlindController,
    observation: &Observation,
    sensing_available: bool,
) -> Result<Vec<f64>, LearnError> {
    controller.act(observation, sensing_available, ActionMode::Deterministic, &mut rand::rngs::mock::StepRng::new(0, 0))
}

/// Runs one episode under a sensing schedule. Energies are not recorded.
pub fn run_blind_episode(
    env: &mut Env,
    controller: &mut BlindController,
    schedule: SensingSchedule,
    seed: u64,
) -> Result<EpisodeMetrics, LearnError> {
    let mut observation = env.reset(seed)?;
    controller.reset();
    let mut metrics = EpisodeMetrics {
        seed,
        episode_return: 0.0,
        kinetic_energy: 0.0,
        bending_energy: 0.0,
        steps: 0,
        diverged: false,
    };
    loop {
        let action = blind_track_step(controller, &observation, schedule.available(env.time()))?;
        match env.step(&action) {
            Ok(outcome) => {
                metrics.episode_return += outcome.reward;
                metrics.steps += 1;
                observation = outcome.observation;
                if outcome.done {
                    break;
                }
            }
            Err(EnvError::Diverged { time, source }) => {
                log::warn!("blind episode {seed} diverged at t = {time:.3} s ({source})");
                metrics.diverged = true;
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(metrics)
}
