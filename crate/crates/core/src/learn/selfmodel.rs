use nalgebra::{DMatrix, DVector, DVectorView};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{reservoir_input, LearnError, RidgeAccumulator};
use crate::arm::{ArmAssembly, N_MUSCLES};
use crate::env::{Env, EnvError, Observation};
use crate::reservoir::ReservoirModel;
use crate::rod::{RodState, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfModelConfig {
    /// Backbone points in the pose map, equally spaced in arc length and
    /// excluding the base.
    pub pose_points: usize,
    /// Future offsets in control steps.
    pub horizons: Vec<usize>,
    /// `None` picks `1e-3 trace(X^T X) / rows`.
    pub ridge_lambda: Option<f64>,
    /// Leading control steps of every episode left out of fitting and
    /// scoring.
    pub washout_steps: usize,
    /// Fraction of episodes, in order, used for fitting; the rest are held
    /// out.
    pub train_fraction: f64,
}

impl Default for SelfModelConfig {
    fn default() -> Self {
        Self { pose_points: 8, horizons: vec![1, 2, 4, 8], ridge_lambda: None, washout_steps: 8, train_fraction: 0.8 }
    }
}

/// Ground truth of one episode at each control instant, including the
/// state after the last step. Positions are relative to the base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecording {
    pub seed: u64,
    pub observations: Vec<Observation>,
    /// `pose_points` backbone points per instant, flattened `x y z`.
    pub pose: Vec<Vec<f64>>,
    pub tip: Vec<[f64; 3]>,
}

impl EpisodeRecording {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Arc-length fractions `j / m`, `j = 1..=m`.
pub fn pose_fractions(points: usize) -> Vec<f64> {
    (1..=points).map(|j| j as f64 / points as f64).collect()
}

/// Backbone points at the given arc-length fractions of the reference
/// length, relative to the base, flattened.
pub fn backbone_points(rod: &RodState, fractions: &[f64]) -> Vec<f64> {
    let total: f64 = rod.ref_lengths.iter().sum();
    let base = rod.positions[0];
    let mut out = Vec::with_capacity(3 * fractions.len());
    for &f in fractions {
        let mut s = f * total;
        let mut i = 0;
        while i + 1 < rod.ref_lengths.len() && s > rod.ref_lengths[i] {
            s -= rod.ref_lengths[i];
            i += 1;
        }
        let w = (s / rod.ref_lengths[i]).clamp(0.0, 1.0);
        let p = rod.positions[i] * (1.0 - w) + rod.positions[i + 1] * w - base;
        out.extend_from_slice(p.as_slice());
    }
    out
}

/// Smooth random actions: independent AR(1) processes per muscle with
/// stationary standard deviation `amplitude`.
#[derive(Debug, Clone)]
pub struct ScriptedActions {
    rng: ChaCha8Rng,
    correlation: f64,
    amplitude: f64,
    action: [f64; N_MUSCLES],
}

impl ScriptedActions {
    pub fn new(seed: u64, correlation: f64, amplitude: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let action = std::array::from_fn(|_| amplitude * rng.sample::<f64, _>(StandardNormal));
        Self { rng, correlation, amplitude, action }
    }

    pub fn next_action(&mut self) -> [f64; N_MUSCLES] {
        let current = self.action;
        let innovation = self.amplitude * (1.0 - self.correlation * self.correlation).sqrt();
        for a in &mut self.action {
            *a = self.correlation * *a + innovation * self.rng.sample::<f64, _>(StandardNormal);
        }
        current
    }
}

/// Records one episode in which `controller` chooses each action from the
/// step index and current observation. A diverged episode ends early.
pub fn record_episode<F>(
    env: &mut Env,
    seed: u64,
    pose_points: usize,
    mut controller: F,
) -> Result<EpisodeRecording, LearnError>
where
    F: FnMut(usize, &Observation) -> Vec<f64>,
{
    let fractions = pose_fractions(pose_points);
    let mut rec = EpisodeRecording { seed, observations: Vec::new(), pose: Vec::new(), tip: Vec::new() };
    let mut observation = env.reset(seed)?;
    let capture = |rec: &mut EpisodeRecording, arm: &ArmAssembly, obs: Observation, tip: Vec3| {
        rec.observations.push(obs);
        rec.pose.push(backbone_points(&arm.backbone, &fractions));
        rec.tip.push(tip.into());
    };
    capture(&mut rec, env.arm(), observation, env.tip());
    for step in 0.. {
        let action = controller(step, &observation);
        match env.step(&action) {
            Ok(outcome) => {
                observation = outcome.observation;
                capture(&mut rec, env.arm(), observation, env.tip());
                if outcome.done {
                    break;
                }
            }
            Err(EnvError::Diverged { time, source }) => {
                log::warn!("recording episode {seed} diverged at t = {time:.3} s ({source}); truncated");
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(rec)
}

/// Reservoir states along a recording, from a reset reservoir.
pub fn drive_recording(
    reservoir: &mut ReservoirModel,
    recording: &EpisodeRecording,
    arm_length: f64,
) -> Result<Vec<Vec<f64>>, LearnError> {
    reservoir.reset();
    recording.observations.iter().map(|o| Ok(reservoir.drive(&reservoir_input(o, arm_length))?.to_vec())).collect()
}

/// Affine maps from one reservoir state to the arm and target, all in
/// base-relative coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfModelMaps {
    /// `3m x n`.
    pub w_pose: DMatrix<f64>,
    pub b_pose: DVector<f64>,
    pub horizons: Vec<usize>,
    /// `3k x n`: one 3-row block per horizon, in `horizons` order.
    pub w_target_future: DMatrix<f64>,
    pub b_target_future: DVector<f64>,
    pub w_tip_future: DMatrix<f64>,
    pub b_tip_future: DVector<f64>,
    pub ridge_lambda: f64,
    pub arm_length: f64,
}

impl SelfModelMaps {
    pub fn pose_points(&self) -> usize {
        self.w_pose.nrows() / 3
    }

    fn block(&self, map: &DMatrix<f64>, bias: &DVector<f64>, horizon: usize, features: &[f64]) -> Option<Vec3> {
        let h = self.horizons.iter().position(|&k| k == horizon)?;
        let u = DVectorView::from_slice(features, features.len());
        Some(map.fixed_rows::<3>(3 * h) * u + bias.fixed_rows::<3>(3 * h))
    }

    /// Pose points relative to the base, flattened.
    pub fn predict_pose(&self, features: &[f64]) -> Vec<f64> {
        let u = DVectorView::from_slice(features, features.len());
        let p: DVector<f64> = &self.w_pose * u + &self.b_pose;
        p.as_slice().to_vec()
    }

    /// Target relative to the base `horizon` control steps ahead.
    pub fn predict_target(&self, features: &[f64], horizon: usize) -> Option<Vec3> {
        self.block(&self.w_target_future, &self.b_target_future, horizon, features)
    }

    pub fn predict_tip(&self, features: &[f64], horizon: usize) -> Option<Vec3> {
        self.block(&self.w_tip_future, &self.b_tip_future, horizon, features)
    }
}

/// Held-out errors: pose as the mean of `|p_hat(s) - p(s)| / s` over points
/// and rows, target and tip as mean `|y_hat - y| / L` per horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfModelReport {
    pub train_rows: usize,
    pub test_rows: usize,
    pub pose_error: f64,
    pub target_errors: Vec<f64>,
    pub tip_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfModelFit {
    pub maps: SelfModelMaps,
    pub report: SelfModelReport,
}

struct Rows {
    features: DMatrix<f64>,
    targets: DMatrix<f64>,
}

/// Rows `t` in `[washout, len - max_horizon)` of every recording: the
/// reservoir state with a trailing constant 1 for the intercept, and the
/// stacked pose, future-target and future-tip targets.
fn build_rows(
    recordings: &[EpisodeRecording],
    reservoir: &ReservoirModel,
    config: &SelfModelConfig,
    arm_length: f64,
) -> Result<Vec<Rows>, LearnError> {
    let m = config.pose_points;
    let horizons = &config.horizons;
    let k_max = horizons.iter().copied().max().unwrap_or(0);
    let q = 3 * m + 6 * horizons.len();
    let mut res = reservoir.clone();
    let n = res.size();
    let mut out = Vec::with_capacity(recordings.len());
    for rec in recordings {
        if rec.pose.iter().any(|p| p.len() != 3 * m) {
            return Err(LearnError::DimensionMismatch { expected: 3 * m, got: rec.pose[0].len() });
        }
        let states = drive_recording(&mut res, rec, arm_length)?;
        let times: Vec<usize> = (config.washout_steps..rec.len().saturating_sub(k_max)).collect();
        let mut features = DMatrix::zeros(times.len(), n + 1);
        let mut targets = DMatrix::zeros(times.len(), q);
        for (row, &t) in times.iter().enumerate() {
            features.view_mut((row, 0), (1, n)).copy_from_slice(&states[t]);
            features[(row, n)] = 1.0;
            let mut row_targets = rec.pose[t].clone();
            for &k in horizons {
                row_targets.extend_from_slice(&rec.observations[t + k].target);
            }
            for &k in horizons {
                row_targets.extend_from_slice(&rec.tip[t + k]);
            }
            targets.row_mut(row).copy_from_slice(&row_targets);
        }
        out.push(Rows { features, targets });
    }
    Ok(out)
}

/// Fits the pose, future-target and future-tip maps on one shared reservoir
/// by ridge regression, holding out the last episodes for scoring.
pub fn fit_self_models(
    recordings: &[EpisodeRecording],
    reservoir: &ReservoirModel,
    config: &SelfModelConfig,
    arm_length: f64,
) -> Result<SelfModelFit, LearnError> {
    if config.pose_points == 0 || config.horizons.is_empty() {
        return Err(LearnError::InvalidConfig {
            field: "self_model",
            reason: "needs at least one pose point and one horizon".into(),
        });
    }
    if !(config.train_fraction > 0.0 && config.train_fraction < 1.0) {
        return Err(LearnError::InvalidConfig { field: "train_fraction", reason: "must lie in (0, 1)".into() });
    }
    let rows = build_rows(recordings, reservoir, config, arm_length)?;
    let n_train = ((recordings.len() as f64 * config.train_fraction).round() as usize).clamp(1, recordings.len());
    let (train, test) = rows.split_at(n_train);
    if test.is_empty() {
        return Err(LearnError::InsufficientData { rows: 0, needed: 1 });
    }
    let n = reservoir.size();
    let q = 3 * config.pose_points + 6 * config.horizons.len();
    let mut acc = RidgeAccumulator::new(n + 1, q);
    for r in train {
        acc.add_rows(&r.features, &r.targets)?;
    }
    if acc.rows() < 10 * n {
        log::warn!("self-model fit on {} rows for {} reservoir units (fewer than 10 per unit)", acc.rows(), n);
    }
    let lambda = config.ridge_lambda.unwrap_or_else(|| acc.default_lambda());
    let w = acc.solve_with_intercept(lambda)?;
    let pose_rows = 3 * config.pose_points;
    let h = config.horizons.len();
    let (weights, bias) = (w.columns(0, n), w.column(n));
    let maps = SelfModelMaps {
        w_pose: weights.rows(0, pose_rows).into_owned(),
        b_pose: bias.rows(0, pose_rows).into_owned(),
        horizons: config.horizons.clone(),
        w_target_future: weights.rows(pose_rows, 3 * h).into_owned(),
        b_target_future: bias.rows(pose_rows, 3 * h).into_owned(),
        w_tip_future: weights.rows(pose_rows + 3 * h, 3 * h).into_owned(),
        b_tip_future: bias.rows(pose_rows + 3 * h, 3 * h).into_owned(),
        ridge_lambda: lambda,
        arm_length,
    };

    let fractions = pose_fractions(config.pose_points);
    let mut pose_error = 0.0;
    let mut target_errors = vec![0.0; h];
    let mut tip_errors = vec![0.0; h];
    let mut test_rows = 0;
    for r in test {
        let predicted = r.features.clone() * w.transpose();
        for row in 0..predicted.nrows() {
            let err = |col: usize| {
                (0..3).map(|j| (predicted[(row, col + j)] - r.targets[(row, col + j)]).powi(2)).sum::<f64>().sqrt()
            };
            pose_error += fractions.iter().enumerate().map(|(p, f)| err(3 * p) / (f * arm_length)).sum::<f64>()
                / fractions.len() as f64;
            for i in 0..h {
                target_errors[i] += err(pose_rows + 3 * i) / arm_length;
                tip_errors[i] += err(pose_rows + 3 * h + 3 * i) / arm_length;
            }
        }
        test_rows += predicted.nrows();
    }
    if test_rows == 0 {
        return Err(LearnError::InsufficientData { rows: 0, needed: 1 });
    }
    let scale = 1.0 / test_rows as f64;
    let report = SelfModelReport {
        train_rows: acc.rows(),
        test_rows,
        pose_error: pose_error * scale,
        target_errors: target_errors.iter().map(|e| e * scale).collect(),
        tip_errors: tip_errors.iter().map(|e| e * scale).collect(),
    };
    Ok(SelfModelFit { maps, report })
}
