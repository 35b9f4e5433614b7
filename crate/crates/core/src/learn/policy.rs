use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// `ln 0.5`: exploration scale of a fresh policy.
pub const INITIAL_LOG_STD: f64 = -std::f64::consts::LN_2;

/// Linear readouts of the reservoir state: a diagonal Gaussian policy with
/// mean `w_o u` and state-independent scale `exp(log_std)`, plus a linear
/// value estimate `w_v . u`. These are the only trained parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutPolicy {
    /// `a x n`.
    pub w_o: DMatrix<f64>,
    pub log_std: DVector<f64>,
    /// Length `n`.
    pub w_v: DVector<f64>,
}

/// How actions are drawn from the policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    Stochastic,
    /// The Gaussian mean; exploration noise off.
    Deterministic,
}

impl ReadoutPolicy {
    /// Zero readouts and `log_std = ln 0.5`.
    pub fn new(n_features: usize, n_actions: usize) -> Self {
        Self {
            w_o: DMatrix::zeros(n_actions, n_features),
            log_std: DVector::from_element(n_actions, INITIAL_LOG_STD),
            w_v: DVector::zeros(n_features),
        }
    }

    /// Same shapes, every entry zero. Used as a gradient container.
    pub fn zeros_like(&self) -> Self {
        Self {
            w_o: DMatrix::zeros(self.w_o.nrows(), self.w_o.ncols()),
            log_std: DVector::zeros(self.log_std.len()),
            w_v: DVector::zeros(self.w_v.len()),
        }
    }

    pub fn n_features(&self) -> usize {
        self.w_o.ncols()
    }

    pub fn n_actions(&self) -> usize {
        self.w_o.nrows()
    }

    pub fn mean(&self, features: &[f64]) -> DVector<f64> {
        &self.w_o * DVectorView::from_slice(features, features.len())
    }

    pub fn value(&self, features: &[f64]) -> f64 {
        self.w_v.iter().zip(features).map(|(w, u)| w * u).sum()
    }

    /// Log density of `action` under the Gaussian at `features`.
    pub fn log_prob(&self, features: &[f64], action: &[f64]) -> f64 {
        let mean = self.mean(features);
        gaussian_log_prob(mean.as_slice(), self.log_std.as_slice(), action)
    }

    /// Differential entropy of the action distribution.
    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|s| s + 0.5 * (2.0 * PI * std::f64::consts::E).ln()).sum()
    }

    /// Draws an action and returns it with its log density.
    pub fn act<R: Rng>(&self, features: &[f64], mode: ActionMode, rng: &mut R) -> (Vec<f64>, f64) {
        let mean = self.mean(features);
        let action: Vec<f64> = match mode {
            ActionMode::Deterministic => mean.iter().copied().collect(),
            ActionMode::Stochastic => mean
                .iter()
                .zip(self.log_std.iter())
                .map(|(m, s)| m + s.exp() * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        };
        let log_prob = gaussian_log_prob(mean.as_slice(), self.log_std.as_slice(), &action);
        (action, log_prob)
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().iter().all(|p| p.iter().all(|x| x.is_finite()))
    }

    /// Flat views of `w_o` (column-major), `log_std` and `w_v`.
    pub fn parameters(&self) -> [&[f64]; 3] {
        [self.w_o.as_slice(), self.log_std.as_slice(), self.w_v.as_slice()]
    }

    pub fn parameters_mut(&mut self) -> [&mut [f64]; 3] {
        [self.w_o.as_mut_slice(), self.log_std.as_mut_slice(), self.w_v.as_mut_slice()]
    }

    pub fn norm(&self) -> f64 {
        self.parameters().iter().flat_map(|p| p.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.parameters_mut().into_iter().flatten().for_each(|x| *x *= factor);
    }
}

pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, s), a)| {
            let z = (a - m) * (-s).exp();
            -0.5 * z * z - s - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}
