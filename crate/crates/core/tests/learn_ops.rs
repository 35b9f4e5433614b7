use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use softarm::arm::N_MUSCLES;
use softarm::env::{EnvConfig, TaskConfig, TrackingConfig};
use softarm::learn::*;
use softarm::reservoir::{init_esn, EsnConfig, ReservoirModel};

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// A buffer with one closed segment of random transitions whose old log
/// densities put every ratio near 1, away from the clip kinks.
fn toy_buffer(policy: &ReadoutPolicy, len: usize, seed: u64) -> RolloutBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buffer = RolloutBuffer::new(policy.n_features(), policy.n_actions());
    for t in 0..len {
        let u: Vec<f64> = (0..policy.n_features()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a: Vec<f64> = (0..policy.n_actions()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let old = policy.log_prob(&u, &a) + rng.gen_range(-0.1..0.1);
        let reward = rng.gen_range(-1.0..1.0);
        buffer.push(&u, &a, old, reward, rng.gen_range(-0.5..0.5), t % 4 == 3).unwrap();
    }
    buffer.end_segment(0.3);
    buffer.compute_advantages(0.9, 0.8).unwrap();
    buffer
}

#[test]
fn gae_matches_direct_discounted_sum_of_residuals() {
    let rewards = [1.0, -0.5, 2.0, 0.25, -1.0];
    let values = [0.2, 0.4, -0.1, 0.3, 0.6];
    let dones = [false, true, false, false, false];
    let bootstrap = 0.7;
    let (gamma, lambda) = (0.9, 0.7);
    let mut buffer = RolloutBuffer::new(1, 1);
    for t in 0..5 {
        buffer.push(&[0.0], &[0.0], 0.0, rewards[t], values[t], dones[t]).unwrap();
    }
    assert!(matches!(buffer.compute_advantages(gamma, lambda), Err(LearnError::OpenSegment)));
    buffer.end_segment(bootstrap);
    buffer.compute_advantages(gamma, lambda).unwrap();

    // A_t = sum_l (gamma lambda)^l delta_{t+l}, stopping after a done step.
    let next_value = |t: usize| if t + 1 < 5 { values[t + 1] } else { bootstrap };
    let delta = |t: usize| rewards[t] + if dones[t] { 0.0 } else { gamma * next_value(t) } - values[t];
    for t in 0..5 {
        let mut expected = 0.0;
        let mut weight = 1.0;
        for s in t..5 {
            expected += weight * delta(s);
            if dones[s] {
                break;
            }
            weight *= gamma * lambda;
        }
        assert!((buffer.advantages()[t] - expected).abs() < 1e-14, "t={t}");
        assert!((buffer.returns()[t] - expected - values[t]).abs() < 1e-14);
    }
}

#[test]
fn surrogate_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut policy = ReadoutPolicy::new(3, 2);
    policy.w_o = gaussian_matrix(2, 3, &mut rng) * 0.5;
    policy.log_std = DVector::from_vec(vec![-0.4, 0.1]);
    policy.w_v = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
    let buffer = toy_buffer(&policy, 12, 5);
    let config = PpoConfig { entropy_coef: 0.01, ..PpoConfig::default() };
    let indices: Vec<usize> = (0..buffer.len()).collect();
    let mut grad = policy.zeros_like();
    let loss = ppo_loss(&policy, &buffer, &indices, &config, Some(&mut grad));
    assert_eq!(loss.clip_fraction, 0.0);

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for block in 0..3 {
        for i in 0..policy.parameters()[block].len() {
            let mut plus = policy.clone();
            plus.parameters_mut()[block][i] += h;
            let mut minus = policy.clone();
            minus.parameters_mut()[block][i] -= h;
            let fd = (ppo_loss(&plus, &buffer, &indices, &config, None).total
                - ppo_loss(&minus, &buffer, &indices, &config, None).total)
                / (2.0 * h);
            let analytic = grad.parameters()[block][i];
            worst = worst.max((analytic - fd).abs() / fd.abs().max(1e-3));
        }
    }
    println!("worst relative gradient error {worst:e}");
    assert!(worst < 1e-4);
}

#[test]
fn zero_advantages_leave_the_mean_map_without_gradient() {
    let mut policy = ReadoutPolicy::new(3, 2);
    policy.w_o[(0, 1)] = 0.3;
    let mut buffer = RolloutBuffer::new(3, 2);
    for t in 0..6 {
        let u = [t as f64 * 0.1, -0.2, 0.5];
        let a = [0.1, -0.3];
        // Reward equal to value and no bootstrap: every residual is zero.
        buffer.push(&u, &a, policy.log_prob(&u, &a), 0.4, 0.4, true).unwrap();
    }
    buffer.end_segment(0.0);
    buffer.compute_advantages(0.99, 0.95).unwrap();
    assert!(buffer.advantages().iter().all(|&a| a == 0.0));
    let mut grad = policy.zeros_like();
    ppo_loss(&policy, &buffer, &(0..6).collect::<Vec<_>>(), &PpoConfig::default(), Some(&mut grad));
    assert!(grad.w_o.iter().all(|&g| g == 0.0));
    assert!(grad.w_v.iter().any(|&g| g != 0.0));
}

#[test]
fn positive_advantage_makes_the_taken_action_more_likely() {
    let mut policy = ReadoutPolicy::new(2, 1);
    let u = [1.0, -0.5];
    let a = [0.8];
    let before = policy.log_prob(&u, &a);
    let mut buffer = RolloutBuffer::new(2, 1);
    buffer.push(&u, &a, before, 1.0, 0.0, true).unwrap();
    buffer.end_segment(0.0);
    let mut opt = Adam::new(&policy, 3e-4, 1e-8);
    let config = PpoConfig { epochs: 1, ..PpoConfig::default() };
    ppo_update(&mut buffer, &mut policy, &mut opt, &config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(policy.log_prob(&u, &a) > before);
    assert!(buffer.is_empty());
}

#[test]
fn clipped_ratio_stops_the_policy_gradient() {
    let policy = ReadoutPolicy::new(2, 1);
    let u = [1.0, 0.5];
    let a = [0.3];
    let config = PpoConfig { value_coef: 0.0, ..PpoConfig::default() };
    let grad_for = |log_ratio: f64, advantage: f64| {
        let mut buffer = RolloutBuffer::new(2, 1);
        buffer.push(&u, &a, policy.log_prob(&u, &a) - log_ratio, advantage, 0.0, true).unwrap();
        buffer.end_segment(0.0);
        buffer.compute_advantages(0.99, 0.95).unwrap();
        let mut grad = policy.zeros_like();
        let loss = ppo_loss(&policy, &buffer, &[0], &config, Some(&mut grad));
        (grad.w_o[(0, 0)], loss.clip_fraction)
    };
    // Ratio 1.5 with a positive advantage: past 1 + clip, flat.
    let (g, clipped) = grad_for(1.5f64.ln(), 1.0);
    assert_eq!((g, clipped), (0.0, 1.0));
    // Same ratio, negative advantage: the unclipped branch is the minimum.
    let (g, _) = grad_for(1.5f64.ln(), -1.0);
    assert!(g != 0.0);
    // Inside the trust region both branches agree and the gradient is live.
    let (g, clipped) = grad_for(1.1f64.ln(), 1.0);
    assert!(g != 0.0 && clipped == 0.0);
}

#[test]
fn non_finite_loss_aborts_and_restores() {
    let mut policy = ReadoutPolicy::new(2, 1);
    let mut buffer = RolloutBuffer::new(2, 1);
    buffer.push(&[1.0, f64::NAN], &[0.0], 0.0, 1.0, 0.0, true).unwrap();
    buffer.end_segment(0.0);
    let before = policy.clone();
    let mut opt = Adam::new(&policy, 3e-4, 1e-8);
    let err = ppo_update(&mut buffer, &mut policy, &mut opt, &PpoConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
    assert!(matches!(err, Err(LearnError::NonFiniteLoss { epoch: 0 })));
    assert_eq!(policy, before);
    assert_eq!(opt.steps, 0);
    assert!(buffer.is_empty());
}

#[test]
fn ridge_recovers_a_planted_map_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = gaussian_matrix(40, 6, &mut rng);
    let w = gaussian_matrix(4, 6, &mut rng);
    let y = &x * w.transpose();
    let fitted = ridge_fit(&x, &y, 0.0).unwrap();
    assert!((fitted - w).amax() < 1e-8);
}

#[test]
fn ridge_matches_explicit_normal_equations_on_a_hand_sized_system() {
    let x =
        DMatrix::from_row_slice(5, 3, &[1.0, 2.0, 0.5, -1.0, 0.0, 3.0, 2.0, 1.0, -2.0, 0.5, -1.5, 1.0, 0.0, 2.5, -0.5]);
    let y = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, -2.0, 1.0, 0.5, 0.5, 3.0, -1.0, 1.0, 2.0]);
    for lambda in [0.0, 0.1, 2.0] {
        let normal = x.transpose() * &x + DMatrix::identity(3, 3) * lambda;
        let oracle = (normal.try_inverse().unwrap() * x.transpose() * &y).transpose();
        let fitted = ridge_fit(&x, &y, lambda).unwrap();
        assert!((fitted - oracle).amax() < 1e-10, "lambda={lambda}");
    }
}

#[test]
fn unpenalized_intercept_matches_centered_ridge() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = gaussian_matrix(30, 4, &mut rng).add_scalar(2.0);
    let y = gaussian_matrix(30, 2, &mut rng).add_scalar(-1.0);
    let lambda = 3.0;
    // Centered fit: slope from the centered normal equations, intercept from the means.
    let (x_mean, y_mean) = (x.row_mean(), y.row_mean());
    let xc = DMatrix::from_fn(30, 4, |i, j| x[(i, j)] - x_mean[j]);
    let yc = DMatrix::from_fn(30, 2, |i, j| y[(i, j)] - y_mean[j]);
    let slope =
        ((xc.transpose() * &xc + DMatrix::identity(4, 4) * lambda).try_inverse().unwrap() * xc.transpose() * yc)
            .transpose();
    let intercept = y_mean.transpose() - &slope * x_mean.transpose();

    let augmented = DMatrix::from_fn(30, 5, |i, j| if j < 4 { x[(i, j)] } else { 1.0 });
    let mut acc = RidgeAccumulator::new(5, 2);
    acc.add_rows(&augmented, &y).unwrap();
    let w = acc.solve_with_intercept(lambda).unwrap();
    assert!((w.columns(0, 4) - slope).amax() < 1e-10);
    assert!((w.column(4) - intercept).amax() < 1e-10);
}

#[test]
fn ridge_shrinks_toward_zero_and_rejects_singular_systems() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = gaussian_matrix(30, 5, &mut rng);
    let y = gaussian_matrix(30, 2, &mut rng);
    let mut previous = f64::INFINITY;
    for lambda in [1e-3, 1e-1, 1.0, 10.0, 1e3, 1e6] {
        let norm = ridge_fit(&x, &y, lambda).unwrap().norm();
        assert!(norm < previous);
        previous = norm;
    }
    assert!(previous < 1e-3);

    let mut dup = x.clone();
    let col = dup.column(0).into_owned();
    dup.set_column(1, &col);
    assert!(matches!(ridge_fit(&dup, &y, 0.0), Err(LearnError::SingularSystem { .. })));
    assert!(ridge_fit(&dup, &y, 1e-3).is_ok());
}

proptest! {
    #[test]
    fn ridge_residual_gradient_vanishes(seed in 0u64..500, lambda in 0.0..10.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian_matrix(20, 4, &mut rng);
        let y = gaussian_matrix(20, 3, &mut rng);
        let w = ridge_fit(&x, &y, lambda).unwrap().transpose();
        let xtx = x.transpose() * &x;
        let residual = &xtx * &w - x.transpose() * &y + &w * lambda;
        prop_assert!(residual.amax() < 1e-8 * xtx.amax().max(1.0));
    }
}

fn short_tracking(seconds: f64) -> EnvConfig {
    let tracking = TrackingConfig { horizon: seconds, ..TrackingConfig::default() };
    EnvConfig { task: TaskConfig::Tracking(tracking), ..EnvConfig::default() }
}

fn small_esn(seed: u64) -> ReservoirModel {
    init_esn(&EsnConfig { size: 32, ..EsnConfig::default() }, seed).unwrap().into()
}

#[test]
fn rollouts_have_one_row_per_environment_step() {
    let env = short_tracking(1.0);
    let mut workers: Vec<_> = (0..8).map(|i| EnvWorker::new(&env, small_esn(1), i).unwrap()).collect();
    let policy = ReadoutPolicy::new(32, N_MUSCLES);
    let settings = RolloutSettings { steps_per_env: 5, reward_scale: 100.0, gamma: 0.99, mode: ActionMode::Stochastic };
    let rollouts = collect_rollouts(&mut workers, &policy, &settings).unwrap();
    assert_eq!(rollouts.buffer.len(), 40);
    assert_eq!(rollouts.buffer.features(39).len(), 32);
    // Four-step episodes: each worker finished exactly one.
    assert_eq!(rollouts.episode_returns.len(), 8);
    assert_eq!(rollouts.buffer.dones().iter().filter(|&&d| d).count(), 8);
}

#[test]
fn deterministic_rollouts_repeat() {
    let env = short_tracking(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut policy = ReadoutPolicy::new(32, N_MUSCLES);
    policy.w_o = gaussian_matrix(N_MUSCLES, 32, &mut rng);
    let settings =
        RolloutSettings { steps_per_env: 3, reward_scale: 1.0, gamma: 0.99, mode: ActionMode::Deterministic };
    let run = || {
        let mut workers = vec![EnvWorker::new(&env, small_esn(1), 9).unwrap()];
        collect_rollouts(&mut workers, &policy, &settings).unwrap().buffer
    };
    assert_eq!(run(), run());
}

#[test]
fn training_never_touches_the_reservoir_and_resumes_exactly() {
    let env = short_tracking(1.0);
    let config = TrainConfig { n_envs: 2, steps_per_env: 4, updates: 3, ..TrainConfig::default() };
    let reservoir = small_esn(5);
    let digest = reservoir.weights_digest();

    let mut straight = Trainer::new(&env, &config, reservoir.clone(), 17).unwrap();
    let mut curve = Vec::new();
    while !straight.is_finished() {
        curve.push(straight.step().unwrap());
    }
    assert_eq!(straight.reservoir().weights_digest(), digest);

    let mut first = Trainer::new(&env, &config, reservoir.clone(), 17).unwrap();
    let r0 = first.step().unwrap();
    let state = first.state().expect("episode boundary");
    let json = serde_json::to_string(&state).unwrap();
    let mut resumed = Trainer::restore(&env, &config, reservoir, serde_json::from_str(&json).unwrap()).unwrap();
    let mut resumed_curve = vec![r0];
    while !resumed.is_finished() {
        resumed_curve.push(resumed.step().unwrap());
    }
    assert_eq!(resumed_curve, curve);
    assert_eq!(resumed.policy(), straight.policy());
    assert_ne!(straight.policy(), &ReadoutPolicy::new(32, N_MUSCLES));
}

#[test]
fn restore_refuses_a_different_reservoir() {
    let env = short_tracking(1.0);
    let config = TrainConfig { n_envs: 1, steps_per_env: 4, updates: 1, ..TrainConfig::default() };
    let trainer = Trainer::new(&env, &config, small_esn(5), 1).unwrap();
    let state = trainer.state().unwrap();
    assert!(matches!(Trainer::restore(&env, &config, small_esn(6), state), Err(LearnError::ReservoirMismatch { .. })));
}

#[test]
fn scripted_actions_have_the_requested_spread_and_lag_correlation() {
    let (rho, amplitude) = (0.8, 0.5);
    let mut script = ScriptedActions::new(4, rho, amplitude);
    let series: Vec<[f64; N_MUSCLES]> = (0..20_000).map(|_| script.next_action()).collect();
    for m in [0, 7, 15] {
        let x: Vec<f64> = series.iter().map(|a| a[m]).collect();
        let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        let lag = x.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (x.len() - 1) as f64;
        assert!((var.sqrt() - amplitude).abs() < 0.03, "std {}", var.sqrt());
        assert!((lag / var - rho).abs() < 0.03, "lag-one correlation {}", lag / var);
    }
}

fn passive_recordings(episodes: u64, seconds: f64) -> Vec<EpisodeRecording> {
    let mut env = softarm::env::Env::new(&short_tracking(seconds)).unwrap();
    (0..episodes).map(|s| record_episode(&mut env, s, 8, |_, _| vec![-50.0; N_MUSCLES]).unwrap()).collect()
}

#[test]
fn straight_arm_pose_and_present_target_are_reconstructed() {
    let recordings = passive_recordings(5, 5.0);
    let config = SelfModelConfig { horizons: vec![0, 1], washout_steps: 2, ..SelfModelConfig::default() };
    let fit = fit_self_models(&recordings, &small_esn(2), &config, 0.2).unwrap();
    println!("{:?}", fit.report);
    assert!(fit.report.pose_error < 1e-6);
    assert!(fit.report.target_errors[0] < 0.05);
    assert!(fit.report.target_errors[0] < fit.report.target_errors[1]);
    let straight = fit.maps.predict_pose(&[0.0; 32]);
    assert!((straight[23] - 0.2).abs() < 1e-12);
}

#[test]
fn full_sensing_blind_controller_matches_the_plain_controller() {
    let env_config = short_tracking(2.0);
    let recordings = passive_recordings(3, 2.0);
    let reservoir = small_esn(3);
    let config = SelfModelConfig { washout_steps: 0, ..SelfModelConfig::default() };
    let config = SelfModelConfig { horizons: vec![1], ..config };
    let maps = fit_self_models(&recordings, &reservoir, &config, 0.2).unwrap().maps;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut policy = ReadoutPolicy::new(32, N_MUSCLES);
    policy.w_o = gaussian_matrix(N_MUSCLES, 32, &mut rng);

    let mut env = softarm::env::Env::new(&env_config).unwrap();
    let plain =
        run_episode(&mut env, &mut reservoir.clone(), &policy, ActionMode::Deterministic, 4, &mut rng, None).unwrap();
    let mut ctrl = BlindController::new(policy.clone(), reservoir.clone(), maps.clone(), 0.2).unwrap();
    let sighted = run_blind_episode(&mut env, &mut ctrl, SensingSchedule::Always, 4).unwrap();
    assert_eq!(sighted.episode_return.to_bits(), plain.episode_return.to_bits());

    let blind = run_blind_episode(&mut env, &mut ctrl, SensingSchedule::Alternating { interval: 0.5 }, 4).unwrap();
    assert_ne!(blind.episode_return, plain.episode_return);

    let no_one_step = SelfModelMaps { horizons: vec![2], ..maps };
    assert!(BlindController::new(policy, reservoir, no_one_step, 0.2).is_err());
}

#[test]
fn sensing_schedule_alternates() {
    let s = SensingSchedule::Alternating { interval: 0.25 };
    let seen: Vec<bool> = (0..6).map(|k| s.available(k as f64 * 0.25)).collect();
    assert_eq!(seen, [true, false, true, false, true, false]);
    let s = SensingSchedule::Alternating { interval: 3.0 };
    assert!(s.available(2.75) && !s.available(3.0) && s.available(6.0));
}

/// One-joint planar arm: the activation sets a target angle that the joint
/// relaxes toward; the tip should reach a fixed point.
struct HingeArm {
    angle: f64,
    steps: usize,
}

impl HingeArm {
    const TARGET: f64 = 0.6;
    const HORIZON: usize = 20;

    fn observation(&self) -> [f64; 3] {
        let (sx, cx) = Self::TARGET.sin_cos();
        [sx, cx, self.angle]
    }

    fn step(&mut self, action: f64) -> (f64, bool) {
        let activation = 0.5 * (action.tanh() + 1.0);
        self.angle += 0.5 * (1.2 * activation - self.angle);
        self.steps += 1;
        let (s, c) = self.angle.sin_cos();
        let (ts, tc) = Self::TARGET.sin_cos();
        (-((s - ts).powi(2) + (c - tc).powi(2)), self.steps >= Self::HORIZON)
    }
}

fn hinge_episode(
    policy: &ReadoutPolicy,
    reservoir: &mut ReservoirModel,
    mode: ActionMode,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut arm = HingeArm { angle: 0.0, steps: 0 };
    reservoir.reset();
    let mut total = 0.0;
    loop {
        let u = reservoir.drive(&arm.observation()).unwrap().to_vec();
        let (a, _) = policy.act(&u, mode, rng);
        let (r, done) = arm.step(a[0]);
        total += r;
        if done {
            return total;
        }
    }
}

#[test]
fn ppo_learns_to_reach_with_a_one_muscle_arm() {
    let mut reservoir: ReservoirModel =
        init_esn(&EsnConfig { size: 32, input_dim: 3, ..EsnConfig::default() }, 7).unwrap().into();
    let digest = reservoir.weights_digest();
    let mut policy = ReadoutPolicy::new(32, 1);
    let mut opt = Adam::new(&policy, 3e-4, 1e-8);
    let config = PpoConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let random_policy = policy.clone();

    for _ in 0..200 {
        let mut buffer = RolloutBuffer::new(32, 1);
        for _ in 0..8 {
            let mut arm = HingeArm { angle: 0.0, steps: 0 };
            reservoir.reset();
            let mut u = reservoir.drive(&arm.observation()).unwrap().to_vec();
            loop {
                let value = policy.value(&u);
                let (a, logp) = policy.act(&u, ActionMode::Stochastic, &mut rng);
                let (r, done) = arm.step(a[0]);
                buffer.push(&u, &a, logp, r, value, done).unwrap();
                if done {
                    break;
                }
                u = reservoir.drive(&arm.observation()).unwrap().to_vec();
            }
            buffer.end_segment(0.0);
        }
        ppo_update(&mut buffer, &mut policy, &mut opt, &config, &mut rng).unwrap();
    }
    assert_eq!(reservoir.weights_digest(), digest);

    let score = |p: &ReadoutPolicy, mode: ActionMode, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..50).map(|_| hinge_episode(p, &mut reservoir.clone(), mode, rng)).collect()
    };
    let mut eval_rng = ChaCha8Rng::seed_from_u64(99);
    let random = score(&random_policy, ActionMode::Stochastic, &mut eval_rng);
    let trained = score(&policy, ActionMode::Deterministic, &mut eval_rng);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let sd = |v: &[f64]| (v.iter().map(|x| (x - mean(v)).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
    let se = (sd(&random).powi(2) / 50.0 + sd(&trained).powi(2) / 50.0).sqrt().max(1e-12);
    println!("random {:.4} trained {:.4} se {:.2e}", mean(&random), mean(&trained), se);
    assert!(mean(&trained) - mean(&random) > 3.0 * se);
}
