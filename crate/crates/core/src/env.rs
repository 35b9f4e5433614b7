//! Control tasks on the muscular arm: tracking a target on a random smooth 3D
//! path, and reaching a fixed target through a nest of rigid cylinders.
//!
//! Both tasks share the observation (target relative to the base plus
//! quarter-averaged backbone curvature), the action (16 unbounded reals
//! squashed into activations) and the reward, the negative time integral of
//! the squared tip-target distance over each control step.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{
    action_to_activation, apply_activations, assemble_arm, ArmAssembly, ArmConfig, ArmError, ArmLoads, ArmWorkspace,
    N_MUSCLES,
};
use crate::rod::{compute_strains, ExternalLoads, RodEnergies, RodState, Vec3};

pub const OBS_DIM: usize = 11;
pub const CURVATURE_INTERVALS: usize = 4;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("trace lengths differ: {tip} tip samples, {target} target samples")]
    TraceMismatch { tip: usize, target: usize },
    #[error("simulation diverged at t = {time} s: {source}")]
    Diverged { time: f64, source: ArmError },
    #[error(transparent)]
    Arm(#[from] ArmError),
    #[error("invalid environment parameter `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("episode log: {0}")]
    Log(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingConfig {
    /// Episode length, s.
    pub horizon: f64,
    /// `|b_j|` as a fraction of the backbone length.
    pub amplitude_fraction: f64,
    /// Frequency interval for every `f_{j,i}`, Hz.
    pub min_frequency: f64,
    pub max_frequency: f64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self { horizon: 100.0, amplitude_fraction: 0.6, min_frequency: 0.5, max_frequency: 1.0 }
    }
}

/// `x_j(t) = b_j sin(2 pi f_j1 t) sin(2 pi f_j2 t) sin(2 pi f_j3 t)`,
/// relative to the arm base.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetTrajectory {
    /// Row `j` holds the three frequencies of component `j`, Hz.
    pub frequencies: [[f64; 3]; 3],
    /// Signed amplitudes, m.
    pub amplitudes: [f64; 3],
}

impl TargetTrajectory {
    pub fn sample(config: &TrackingConfig, arm_length: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut frequencies = [[0.0; 3]; 3];
        for f in frequencies.iter_mut().flatten() {
            *f = rng.gen_range(config.min_frequency..=config.max_frequency);
        }
        let magnitude = config.amplitude_fraction * arm_length;
        let amplitudes = [(); 3].map(|_| if rng.gen_bool(0.5) { magnitude } else { -magnitude });
        Self { frequencies, amplitudes }
    }

    pub fn position(&self, t: f64) -> Vec3 {
        Vec3::from_fn(|j, _| {
            self.amplitudes[j] * self.frequencies[j].iter().map(|f| (2.0 * PI * f * t).sin()).product::<f64>()
        })
    }
}

/// A tracking episode's parameters and clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingEpisode {
    pub trajectory: TargetTrajectory,
    pub clock: f64,
    pub step_count: usize,
    pub horizon: f64,
    pub control_dt: f64,
}

pub fn new_tracking_episode(config: &TrackingConfig, arm_length: f64, control_dt: f64, seed: u64) -> TrackingEpisode {
    TrackingEpisode {
        trajectory: TargetTrajectory::sample(config, arm_length, seed),
        clock: 0.0,
        step_count: 0,
        horizon: config.horizon,
        control_dt,
    }
}

pub fn target_position(episode: &TrackingEpisode, t: f64) -> Vec3 {
    episode.trajectory.position(t)
}

/// Rigid capsule: the points within `radius` of segment `start`-`end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cylinder {
    pub start: [f64; 3],
    pub end: [f64; 3],
    pub radius: f64,
}

impl Cylinder {
    /// Outward unit normal and signed distance from the surface to `x`.
    pub fn surface_distance(&self, x: &Vec3) -> (Vec3, f64) {
        let a = Vec3::from(self.start);
        let axis = Vec3::from(self.end) - a;
        let t = ((x - a).dot(&axis) / axis.norm_squared()).clamp(0.0, 1.0);
        let radial = x - (a + t * axis);
        let dist = radial.norm();
        let normal =
            if dist > 0.0 { radial / dist } else { axis.cross(&Vec3::x()).try_normalize(0.0).unwrap_or(Vec3::y()) };
        (normal, dist - self.radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactParams {
    /// Penalty stiffness, N/m.
    pub stiffness: f64,
    pub friction: f64,
    /// Sliding speed at which friction saturates at `friction * normal`, m/s.
    pub slip_speed: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self { stiffness: 1e4, friction: 0.3, slip_speed: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NestScene {
    pub cylinders: Vec<Cylinder>,
    /// Height of the horizontal floor plane, m.
    pub floor_height: f64,
    /// Fixed target relative to the base, m.
    pub target: [f64; 3],
    pub horizon: f64,
    pub contact: ContactParams,
}

const NEST_LAYOUT_SEED: u64 = 20_240_917;
const NEST_CYLINDERS: usize = 12;

impl Default for NestScene {
    /// Twelve cylinders scattered between the upright arm and a target low on
    /// its +x side, for the default 0.2 m arm.
    fn default() -> Self {
        let target = Vec3::new(0.15, 0.0, 0.04);
        let mut rng = ChaCha8Rng::seed_from_u64(NEST_LAYOUT_SEED);
        let mut cylinders = Vec::with_capacity(NEST_CYLINDERS);
        while cylinders.len() < NEST_CYLINDERS {
            let center = Vec3::new(rng.gen_range(0.045..0.11), rng.gen_range(-0.05..0.05), rng.gen_range(0.03..0.17));
            let yaw = rng.gen_range(-0.6..0.6f64);
            let pitch = rng.gen_range(-0.4..0.4f64);
            let half = rng.gen_range(0.025..0.045);
            let axis = Vec3::new(yaw.sin() * pitch.cos(), yaw.cos() * pitch.cos(), pitch.sin()) * half;
            let cylinder = Cylinder {
                start: (center - axis).into(),
                end: (center + axis).into(),
                radius: rng.gen_range(0.004..0.008),
            };
            // Keep the target reachable and the rest configuration clear.
            let (_, gap) = cylinder.surface_distance(&target);
            let clear_of_arm = (0..=20).all(|k| {
                let p = Vec3::new(0.0, 0.0, 0.01 * k as f64);
                cylinder.surface_distance(&p).1 > 0.02
            });
            if gap > 0.015 && clear_of_arm {
                cylinders.push(cylinder);
            }
        }
        Self { cylinders, floor_height: -0.01, target: target.into(), horizon: 5.0, contact: ContactParams::default() }
    }
}

/// Radius carried by a node: the mean of its adjacent element radii.
fn node_radius(rod: &RodState, node: usize) -> f64 {
    let n = rod.n_elem();
    match node {
        0 => rod.radii[0],
        k if k == n => rod.radii[n - 1],
        k => 0.5 * (rod.radii[k - 1] + rod.radii[k]),
    }
}

fn contact_force(params: &ContactParams, normal: Vec3, depth: f64, velocity: &Vec3) -> Vec3 {
    let push = params.stiffness * depth;
    let slide = velocity - velocity.dot(&normal) * normal;
    let speed = slide.norm();
    let friction =
        if speed > 0.0 { -params.friction * push * slide / speed.max(params.slip_speed) } else { Vec3::zeros() };
    push * normal + friction
}

/// Penalty contact of one rod's nodes (as spheres of the local rod radius)
/// with the scene, added to `loads`.
pub fn rod_contact(rod: &RodState, scene: &NestScene, loads: &mut ExternalLoads) {
    for (node, x) in rod.positions.iter().enumerate() {
        let r = node_radius(rod, node);
        let v = &rod.velocities[node];
        let floor_depth = scene.floor_height + r - x.z;
        if floor_depth > 0.0 {
            loads.forces[node] += contact_force(&scene.contact, Vec3::z(), floor_depth, v);
        }
        for c in &scene.cylinders {
            let (normal, gap) = c.surface_distance(x);
            if gap < r {
                loads.forces[node] += contact_force(&scene.contact, normal, r - gap, v);
            }
        }
    }
}

/// Contact loads on all 17 rods.
pub fn obstacle_contact(arm: &ArmAssembly, scene: &NestScene) -> ArmLoads {
    let mut loads = ArmLoads::zeros(arm);
    add_obstacle_contact(arm, scene, &mut loads);
    loads
}

fn add_obstacle_contact(arm: &ArmAssembly, scene: &NestScene, loads: &mut ArmLoads) {
    rod_contact(&arm.backbone, scene, &mut loads.backbone);
    for (unit, l) in arm.muscles.iter().zip(loads.muscles.iter_mut()) {
        rod_contact(&unit.rod, scene, l);
    }
}

/// Target relative to the base and quarter-averaged backbone curvature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub target: [f64; 3],
    /// `[normal, binormal]` per interval, from base to tip.
    pub curvature: [[f64; 2]; CURVATURE_INTERVALS],
}

impl Observation {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(OBS_DIM);
        v.extend_from_slice(&self.target);
        self.curvature.iter().for_each(|k| v.extend_from_slice(k));
        v
    }
}

/// `(L / 2 pi)` times the mean local bending curvature of the samples in
/// each quarter of the rod. Samples sit at the interior nodes, plus the base
/// of a clamped rod.
pub fn normalized_curvature(rod: &RodState) -> Result<[[f64; 2]; CURVATURE_INTERVALS], ArmError> {
    let strains = compute_strains(rod).map_err(|source| ArmError::Rod { rod: crate::arm::RodId::Backbone, source })?;
    let length = rod.rest_length();
    let mut sums = [[0.0; 2]; CURVATURE_INTERVALS];
    let mut counts = [0usize; CURVATURE_INTERVALS];
    let mut add = |s: f64, k: &Vec3| {
        let q = ((s / length * CURVATURE_INTERVALS as f64) as usize).min(CURVATURE_INTERVALS - 1);
        sums[q][0] += k.x;
        sums[q][1] += k.y;
        counts[q] += 1;
    };
    if let Some(k) = &strains.base_curvature {
        add(0.0, k);
    }
    let mut s = 0.0;
    for (k, kappa) in strains.curvature.iter().enumerate() {
        s += rod.ref_lengths[k];
        add(s, kappa);
    }
    let scale = length / (2.0 * PI);
    let mut out = [[0.0; 2]; CURVATURE_INTERVALS];
    for ((o, sum), &count) in out.iter_mut().zip(&sums).zip(&counts) {
        if count > 0 {
            *o = [scale * sum[0] / count as f64, scale * sum[1] / count as f64];
        }
    }
    Ok(out)
}

pub fn observe(arm: &ArmAssembly, target: &Vec3) -> Result<Observation, ArmError> {
    Ok(Observation { target: (*target).into(), curvature: normalized_curvature(&arm.backbone)? })
}

/// `-integral |tip - target|^2 dt` by the trapezoid rule over samples spaced
/// `dt` apart.
pub fn reward(tip_trace: &[Vec3], target_trace: &[Vec3], dt: f64) -> Result<f64, EnvError> {
    if tip_trace.len() != target_trace.len() {
        return Err(EnvError::TraceMismatch { tip: tip_trace.len(), target: target_trace.len() });
    }
    let sq: Vec<f64> = tip_trace.iter().zip(target_trace).map(|(a, b)| (a - b).norm_squared()).collect();
    let integral: f64 = sq.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dt).sum();
    Ok(-integral)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskConfig {
    Tracking(TrackingConfig),
    Nest(NestScene),
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig::Tracking(TrackingConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub arm: ArmConfig,
    /// Control period, s.
    pub control_dt: f64,
    pub task: TaskConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { arm: ArmConfig::default(), control_dt: 0.25, task: TaskConfig::default() }
    }
}

impl EnvConfig {
    pub fn horizon(&self) -> f64 {
        match &self.task {
            TaskConfig::Tracking(t) => t.horizon,
            TaskConfig::Nest(n) => n.horizon,
        }
    }

    /// Control steps per episode.
    pub fn episode_steps(&self) -> usize {
        (self.horizon() / self.control_dt).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpisodeStatus {
    Running,
    Finished,
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Moving(TargetTrajectory),
    Fixed(Vec3),
}

impl Target {
    pub fn position(&self, t: f64) -> Vec3 {
        match self {
            Target::Moving(traj) => traj.position(t),
            Target::Fixed(p) => *p,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
}

/// One episode-capable environment; `reset` starts a new episode.
#[derive(Debug, Clone)]
pub struct Env {
    config: EnvConfig,
    rest: ArmAssembly,
    arm: ArmAssembly,
    workspace: ArmWorkspace,
    target: Target,
    step_count: usize,
    status: EpisodeStatus,
    tip_trace: Vec<Vec3>,
    target_trace: Vec<Vec3>,
}

impl Env {
    pub fn new(config: &EnvConfig) -> Result<Self, EnvError> {
        if !(config.control_dt > 0.0 && config.horizon() >= config.control_dt) {
            return Err(EnvError::InvalidConfig {
                field: "control_dt",
                reason: "must be positive and no longer than the horizon".into(),
            });
        }
        let mut rest = assemble_arm(&config.arm)?;
        if let TaskConfig::Nest(scene) = &config.task {
            // Contact springs on the lightest node also bound the step.
            let lightest = std::iter::once(&rest.backbone)
                .chain(rest.muscles.iter().map(|m| &m.rod))
                .flat_map(|r| r.node_masses.iter().copied())
                .fold(f64::INFINITY, f64::min);
            let contact_dt = config.arm.cfl_safety * 2.0 * (lightest / scene.contact.stiffness).sqrt();
            rest.dt = rest.dt.min(contact_dt);
        }
        let target = match &config.task {
            TaskConfig::Tracking(t) => Target::Moving(TargetTrajectory::sample(t, config.arm.backbone.length, 0)),
            TaskConfig::Nest(scene) => Target::Fixed(Vec3::from(scene.target)),
        };
        Ok(Self {
            workspace: ArmWorkspace::new(&rest),
            arm: rest.clone(),
            rest,
            config: config.clone(),
            target,
            step_count: 0,
            status: EpisodeStatus::Finished,
            tip_trace: Vec::new(),
            target_trace: Vec::new(),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn arm(&self) -> &ArmAssembly {
        &self.arm
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    pub fn time(&self) -> f64 {
        self.step_count as f64 * self.config.control_dt
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn status(&self) -> EpisodeStatus {
        self.status
    }

    /// Tip relative to the base.
    pub fn tip(&self) -> Vec3 {
        self.arm.tip() - self.arm.base()
    }

    /// Straight arm at rest; tracking episodes draw a new trajectory from
    /// `seed`.
    pub fn reset(&mut self, seed: u64) -> Result<Observation, EnvError> {
        self.arm = self.rest.clone();
        if let TaskConfig::Tracking(t) = &self.config.task {
            self.target = Target::Moving(TargetTrajectory::sample(t, self.config.arm.backbone.length, seed));
        }
        self.step_count = 0;
        self.status = EpisodeStatus::Running;
        self.observation()
    }

    pub fn observation(&self) -> Result<Observation, EnvError> {
        Ok(observe(&self.arm, &self.target.position(self.time()))?)
    }

    /// Holds `squash(action)` for one control period.
    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError> {
        if self.status != EpisodeStatus::Running {
            return Err(EnvError::EpisodeDone);
        }
        if action.len() != N_MUSCLES {
            return Err(EnvError::DimensionMismatch { expected: N_MUSCLES, got: action.len() });
        }
        apply_activations(&mut self.arm, &action_to_activation(action))?;
        let t0 = self.time();
        let control_dt = self.config.control_dt;
        let substeps = (control_dt / self.arm.dt).ceil().max(1.0) as usize;
        let dt = control_dt / substeps as f64;
        self.tip_trace.clear();
        self.target_trace.clear();
        self.tip_trace.push(self.tip());
        self.target_trace.push(self.target.position(t0));
        let scene = match &self.config.task {
            TaskConfig::Nest(scene) => Some(scene),
            TaskConfig::Tracking(_) => None,
        };
        for k in 1..=substeps {
            let result = self.arm.substep(dt, &mut self.workspace, &mut |arm: &ArmAssembly, loads: &mut ArmLoads| {
                if let Some(scene) = scene {
                    add_obstacle_contact(arm, scene, loads);
                }
            });
            if let Err(source) = result {
                self.status = EpisodeStatus::Diverged;
                return Err(EnvError::Diverged { time: t0 + k as f64 * dt, source });
            }
            self.tip_trace.push(self.tip());
            self.target_trace.push(self.target.position(t0 + k as f64 * dt));
        }
        let r = reward(&self.tip_trace, &self.target_trace, dt)?;
        self.step_count += 1;
        let done = self.step_count >= self.config.episode_steps();
        if done {
            self.status = EpisodeStatus::Finished;
        }
        Ok(StepOutcome { observation: self.observation()?, reward: r, done })
    }

    pub fn backbone_energies(&self) -> Result<RodEnergies, EnvError> {
        Ok(self.arm.backbone_energies()?)
    }
}

/// `step_env` in free-function form.
pub fn step_env(env: &mut Env, action: &[f64]) -> Result<StepOutcome, EnvError> {
    env.step(action)
}

/// One line of the episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub tip: [f64; 3],
    pub energies: RodEnergies,
}

/// Line-delimited JSON episode log.
pub struct EpisodeLog {
    out: BufWriter<File>,
}

impl EpisodeLog {
    pub fn create(path: &Path) -> Result<Self, EnvError> {
        Ok(Self { out: BufWriter::new(File::create(path)?) })
    }

    /// Starts the log with one header line, e.g. provenance.
    pub fn create_with_header<H: Serialize>(path: &Path, header: &H) -> Result<Self, EnvError> {
        let mut log = Self::create(path)?;
        log.write_line(header)?;
        Ok(log)
    }

    pub fn record(&mut self, record: &StepRecord) -> Result<(), EnvError> {
        self.write_line(record)
    }

    fn write_line<T: Serialize>(&mut self, value: &T) -> Result<(), EnvError> {
        serde_json::to_writer(&mut self.out, value).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), EnvError> {
        self.out.flush()?;
        Ok(())
    }
}
