use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LearnError, ReadoutPolicy, RolloutBuffer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Global gradient-norm cap per minibatch; `0` disables clipping.
    pub max_grad_norm: f64,
    /// Standardize advantages within each minibatch.
    pub normalize_advantages: bool,
    pub adam_epsilon: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            epochs: 10,
            minibatch: 64,
            gamma: 0.99,
            gae_lambda: 0.95,
            learning_rate: 3e-4,
            entropy_coef: 0.0,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            normalize_advantages: true,
            adam_epsilon: 1e-8,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let check = |ok: bool, field: &'static str, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(LearnError::InvalidConfig { field, reason: reason.to_string() })
            }
        };
        check(self.clip > 0.0 && self.clip < 1.0, "clip", "must lie in (0, 1)")?;
        check(self.epochs > 0, "epochs", "must be positive")?;
        check(self.minibatch > 0, "minibatch", "must be positive")?;
        check((0.0..=1.0).contains(&self.gamma), "gamma", "must lie in [0, 1]")?;
        check((0.0..=1.0).contains(&self.gae_lambda), "gae_lambda", "must lie in [0, 1]")?;
        check(self.learning_rate > 0.0 && self.learning_rate.is_finite(), "learning_rate", "must be positive")?;
        check(self.entropy_coef >= 0.0, "entropy_coef", "must be >= 0")?;
        check(self.value_coef >= 0.0, "value_coef", "must be >= 0")?;
        check(self.max_grad_norm >= 0.0, "max_grad_norm", "must be >= 0")?;
        check(self.adam_epsilon > 0.0, "adam_epsilon", "must be positive")
    }
}

/// Loss terms over one minibatch. `total = policy + value_coef * value -
/// entropy_coef * entropy`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoLoss {
    pub total: f64,
    /// Negated clipped surrogate.
    pub policy: f64,
    /// Mean squared error of the value readout against the returns.
    pub value: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    /// Fraction of samples whose ratio left `[1 - clip, 1 + clip]`.
    pub clip_fraction: f64,
}

/// Loss of `policy` on the transitions `indices` of a buffer whose
/// advantages are computed. If `grad` is given, the analytic gradient of
/// `total` is written into it.
pub fn ppo_loss(
    policy: &ReadoutPolicy,
    buffer: &RolloutBuffer,
    indices: &[usize],
    config: &PpoConfig,
    mut grad: Option<&mut ReadoutPolicy>,
) -> PpoLoss {
    let batch = indices.len() as f64;
    let advantages = minibatch_advantages(buffer, indices, config.normalize_advantages);
    let inv_std: Vec<f64> = policy.log_std.iter().map(|s| (-s).exp()).collect();
    let log_norm = 0.5 * (2.0 * std::f64::consts::PI).ln();
    if let Some(g) = grad.as_deref_mut() {
        *g = policy.zeros_like();
    }

    let mut loss = PpoLoss::default();
    let mut z = vec![0.0; policy.n_actions()];
    for (&t, &adv) in indices.iter().zip(&advantages) {
        let u = buffer.features(t);
        let mean = policy.mean(u);
        let mut log_prob = 0.0;
        for (j, a) in buffer.action(t).iter().enumerate() {
            z[j] = (a - mean[j]) * inv_std[j];
            log_prob += -0.5 * z[j] * z[j] - policy.log_std[j] - log_norm;
        }
        let log_ratio = log_prob - buffer.log_probs()[t];
        let ratio = log_ratio.exp();
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - config.clip, 1.0 + config.clip) * adv;
        loss.policy -= unclipped.min(clipped) / batch;
        loss.approx_kl += ((ratio - 1.0) - log_ratio) / batch;
        if (ratio - 1.0).abs() > config.clip {
            loss.clip_fraction += 1.0 / batch;
        }
        let value = policy.value(u);
        let error = value - buffer.returns()[t];
        loss.value += error * error / batch;

        if let Some(g) = grad.as_deref_mut() {
            // d(-min(rA, clip(r)A))/d(log p); zero once the clipped branch is active.
            let d_log_prob = if unclipped <= clipped { -unclipped / batch } else { 0.0 };
            for j in 0..z.len() {
                let d_mean = d_log_prob * z[j] * inv_std[j];
                for (k, uk) in u.iter().enumerate() {
                    g.w_o[(j, k)] += d_mean * uk;
                }
                g.log_std[j] += d_log_prob * (z[j] * z[j] - 1.0);
            }
            let d_value = config.value_coef * 2.0 * error / batch;
            for (k, uk) in u.iter().enumerate() {
                g.w_v[k] += d_value * uk;
            }
        }
    }
    loss.entropy = policy.entropy();
    if let Some(g) = grad {
        g.log_std.add_scalar_mut(-config.entropy_coef);
    }
    loss.total = loss.policy + config.value_coef * loss.value - config.entropy_coef * loss.entropy;
    loss
}

fn minibatch_advantages(buffer: &RolloutBuffer, indices: &[usize], normalize: bool) -> Vec<f64> {
    let raw: Vec<f64> = indices.iter().map(|&t| buffer.advantages()[t]).collect();
    if !normalize || raw.len() < 2 {
        return raw;
    }
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let scale = 1.0 / (var.sqrt() + 1e-8);
    raw.iter().map(|a| (a - mean) * scale).collect()
}

/// Adam over the three readout parameter blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub steps: u64,
    first: ReadoutPolicy,
    second: ReadoutPolicy,
}

impl Adam {
    pub fn new(policy: &ReadoutPolicy, learning_rate: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon,
            steps: 0,
            first: policy.zeros_like(),
            second: policy.zeros_like(),
        }
    }

    /// Descends along `grad`.
    pub fn step(&mut self, policy: &mut ReadoutPolicy, grad: &ReadoutPolicy) {
        self.steps += 1;
        let t = self.steps as i32;
        let step = self.learning_rate * (1.0 - self.beta2.powi(t)).sqrt() / (1.0 - self.beta1.powi(t));
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let blocks = policy
            .parameters_mut()
            .into_iter()
            .zip(grad.parameters())
            .zip(self.first.parameters_mut().into_iter().zip(self.second.parameters_mut()));
        for ((p, g), (m, v)) in blocks {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= step * m[i] / (v[i].sqrt() + eps * (1.0 - b2.powi(t)).sqrt());
            }
        }
    }
}

/// Averages over all minibatches of an update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub minibatches: usize,
}

/// Clipped-surrogate PPO on one on-policy buffer. Only the readouts change.
/// The buffer is consumed: it is empty afterwards, whether or not the update
/// succeeds. A non-finite loss or gradient restores the policy and optimizer
/// to their state before the update.
pub fn ppo_update<R: Rng>(
    buffer: &mut RolloutBuffer,
    policy: &mut ReadoutPolicy,
    optimizer: &mut Adam,
    config: &PpoConfig,
    rng: &mut R,
) -> Result<PpoStats, LearnError> {
    config.validate()?;
    if buffer.is_empty() {
        return Err(LearnError::EmptyBuffer);
    }
    if buffer.n_features() != policy.n_features() || buffer.n_actions() != policy.n_actions() {
        buffer.clear();
        return Err(LearnError::DimensionMismatch { expected: policy.n_features(), got: buffer.n_features() });
    }
    if let Err(e) = buffer.compute_advantages(config.gamma, config.gae_lambda) {
        buffer.clear();
        return Err(e);
    }
    let snapshot = (policy.clone(), optimizer.clone());
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    let mut grad = policy.zeros_like();
    let mut stats = PpoStats::default();
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        for indices in order.chunks(config.minibatch) {
            let loss = ppo_loss(policy, buffer, indices, config, Some(&mut grad));
            let norm = grad.norm();
            if !loss.total.is_finite() || !norm.is_finite() {
                log::error!("non-finite PPO loss in epoch {epoch}; update aborted and rollouts dropped");
                (*policy, *optimizer) = snapshot;
                buffer.clear();
                return Err(LearnError::NonFiniteLoss { epoch });
            }
            if config.max_grad_norm > 0.0 && norm > config.max_grad_norm {
                grad.scale(config.max_grad_norm / norm);
            }
            optimizer.step(policy, &grad);
            stats.policy_loss += loss.policy;
            stats.value_loss += loss.value;
            stats.entropy += loss.entropy;
            stats.approx_kl += loss.approx_kl;
            stats.clip_fraction += loss.clip_fraction;
            stats.grad_norm += norm;
            stats.minibatches += 1;
        }
    }
    let k = stats.minibatches as f64;
    for x in [
        &mut stats.policy_loss,
        &mut stats.value_loss,
        &mut stats.entropy,
        &mut stats.approx_kl,
        &mut stats.clip_fraction,
        &mut stats.grad_norm,
    ] {
        *x /= k;
    }
    buffer.clear();
    Ok(stats)
}
