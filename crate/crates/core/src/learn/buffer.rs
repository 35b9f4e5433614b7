use std::ops::Range;

use super::LearnError;

/// On-policy transitions, stored as contiguous per-environment segments.
///
/// A segment is closed with the value estimate of the state that follows its
/// last transition. Advantages and returns exist only once every segment is
/// closed and [`RolloutBuffer::compute_advantages`] has run.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    n_features: usize,
    n_actions: usize,
    features: Vec<f64>,
    actions: Vec<f64>,
    log_probs: Vec<f64>,
    rewards: Vec<f64>,
    values: Vec<f64>,
    /// No bootstrapping past this transition.
    dones: Vec<bool>,
    segments: Vec<(Range<usize>, f64)>,
    open_from: usize,
    advantages: Vec<f64>,
    returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(n_features: usize, n_actions: usize) -> Self {
        Self {
            n_features,
            n_actions,
            features: Vec::new(),
            actions: Vec::new(),
            log_probs: Vec::new(),
            rewards: Vec::new(),
            values: Vec::new(),
            dones: Vec::new(),
            segments: Vec::new(),
            open_from: 0,
            advantages: Vec::new(),
            returns: Vec::new(),
        }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn push(
        &mut self,
        features: &[f64],
        action: &[f64],
        log_prob: f64,
        reward: f64,
        value: f64,
        done: bool,
    ) -> Result<(), LearnError> {
        if features.len() != self.n_features {
            return Err(LearnError::DimensionMismatch { expected: self.n_features, got: features.len() });
        }
        if action.len() != self.n_actions {
            return Err(LearnError::DimensionMismatch { expected: self.n_actions, got: action.len() });
        }
        self.features.extend_from_slice(features);
        self.actions.extend_from_slice(action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.values.push(value);
        self.dones.push(done);
        self.advantages.clear();
        self.returns.clear();
        Ok(())
    }

    /// Closes the transitions pushed since the previous segment.
    /// `bootstrap_value` estimates the state after the last of them; it is
    /// ignored if that transition is done.
    pub fn end_segment(&mut self, bootstrap_value: f64) {
        let end = self.len();
        if end > self.open_from {
            self.segments.push((self.open_from..end, bootstrap_value));
        }
        self.open_from = end;
    }

    /// Moves every transition of `other` to the end of `self`.
    pub fn append(&mut self, mut other: RolloutBuffer) -> Result<(), LearnError> {
        if other.n_features != self.n_features || other.n_actions != self.n_actions {
            return Err(LearnError::DimensionMismatch { expected: self.n_features, got: other.n_features });
        }
        if self.open_from != self.len() || other.open_from != other.len() {
            return Err(LearnError::OpenSegment);
        }
        let offset = self.len();
        self.features.append(&mut other.features);
        self.actions.append(&mut other.actions);
        self.log_probs.append(&mut other.log_probs);
        self.rewards.append(&mut other.rewards);
        self.values.append(&mut other.values);
        self.dones.append(&mut other.dones);
        self.segments.extend(other.segments.into_iter().map(|(r, v)| (r.start + offset..r.end + offset, v)));
        self.open_from = self.len();
        self.advantages.clear();
        self.returns.clear();
        Ok(())
    }

    /// Generalized advantage estimation over each segment; returns are
    /// `advantage + value`.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) -> Result<(), LearnError> {
        if self.open_from != self.len() {
            return Err(LearnError::OpenSegment);
        }
        let n = self.len();
        self.advantages = vec![0.0; n];
        for (range, bootstrap) in &self.segments {
            let mut next_value = *bootstrap;
            let mut running = 0.0;
            for t in range.clone().rev() {
                let continues = if self.dones[t] { 0.0 } else { 1.0 };
                let delta = self.rewards[t] + gamma * next_value * continues - self.values[t];
                running = delta + gamma * lambda * continues * running;
                self.advantages[t] = running;
                next_value = self.values[t];
            }
        }
        self.returns = self.advantages.iter().zip(&self.values).map(|(a, v)| a + v).collect();
        Ok(())
    }

    pub fn has_advantages(&self) -> bool {
        self.advantages.len() == self.len() && !self.is_empty()
    }

    pub fn features(&self, t: usize) -> &[f64] {
        &self.features[t * self.n_features..(t + 1) * self.n_features]
    }

    pub fn action(&self, t: usize) -> &[f64] {
        &self.actions[t * self.n_actions..(t + 1) * self.n_actions]
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dones(&self) -> &[bool] {
        &self.dones
    }

    /// Empty until [`RolloutBuffer::compute_advantages`] has run.
    pub fn advantages(&self) -> &[f64] {
        &self.advantages
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    pub fn clear(&mut self) {
        *self = Self::new(self.n_features, self.n_actions);
    }
}
