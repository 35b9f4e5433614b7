use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{spectral_radius, CsrMatrix, ReservoirError};

/// Upper bound on re-draws when a sample has zero spectral radius.
const MAX_RESAMPLES: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EsnConfig {
    pub size: usize,
    pub input_dim: usize,
    /// Fraction of nonzero entries in both weight matrices.
    pub density: f64,
    pub weight_std: f64,
    pub spectral_radius_target: f64,
}

impl Default for EsnConfig {
    fn default() -> Self {
        Self { size: 256, input_dim: 11, density: 0.1, weight_std: 0.5, spectral_radius_target: 0.9 }
    }
}

impl EsnConfig {
    pub fn validate(&self) -> Result<(), ReservoirError> {
        let bad = |field, reason: &str| Err(ReservoirError::InvalidConfig { field, reason: reason.into() });
        if self.size == 0 {
            return bad("size", "must be at least 1");
        }
        if self.input_dim == 0 {
            return bad("input_dim", "must be at least 1");
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return bad("density", "must lie in (0, 1]");
        }
        if !(self.weight_std > 0.0 && self.weight_std.is_finite()) {
            return bad("weight_std", "must be positive");
        }
        if !(self.spectral_radius_target > 0.0 && self.spectral_radius_target < 1.0) {
            return bad("spectral_radius_target", "must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Echo-state network `u <- tanh(W_in s + W_rec u)` with fixed weights.
#[derive(Debug, Clone)]
pub struct EchoStateReservoir {
    config: EsnConfig,
    /// Seed that produced the weights, after any zero-radius re-draws.
    seed: u64,
    w_in: DMatrix<f64>,
    w_rec: CsrMatrix,
    state: DVector<f64>,
    drive: Vec<f64>,
}

/// Exactly `round(density * len)` distinct positions (at least one), sorted.
pub(crate) fn sample_positions(rng: &mut ChaCha8Rng, len: usize, density: f64) -> Vec<usize> {
    let count = ((density * len as f64).round() as usize).clamp(1, len);
    let mut picks = index::sample(rng, len, count).into_vec();
    picks.sort_unstable();
    picks
}

pub(crate) fn sample_sparse_normal(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    density: f64,
    normal: &Normal<f64>,
) -> CsrMatrix {
    let triplets: Vec<_> = sample_positions(rng, rows * cols, density)
        .into_iter()
        .map(|p| (p / cols, p % cols, normal.sample(rng)))
        .collect();
    CsrMatrix::from_triplets(rows, cols, &triplets)
}

pub fn init_esn(config: &EsnConfig, seed: u64) -> Result<EchoStateReservoir, ReservoirError> {
    config.validate()?;
    let (n, s) = (config.size, config.input_dim);
    let normal = Normal::new(0.0, config.weight_std).expect("validated std");
    for attempt in 0..MAX_RESAMPLES {
        let draw_seed = seed.wrapping_add(attempt);
        let mut rng = ChaCha8Rng::seed_from_u64(draw_seed);
        let w_in = sample_sparse_normal(&mut rng, n, s, config.density, &normal).to_dense();
        let mut w_rec = sample_sparse_normal(&mut rng, n, n, config.density, &normal);
        let radius = spectral_radius(&w_rec)?;
        if radius <= 1e-9 * config.weight_std {
            log::debug!("recurrent draw {draw_seed} has zero spectral radius, re-sampling");
            continue;
        }
        w_rec.scale(config.spectral_radius_target / radius);
        return Ok(EchoStateReservoir {
            config: config.clone(),
            seed: draw_seed,
            w_in,
            w_rec,
            state: DVector::zeros(n),
            drive: vec![0.0; n],
        });
    }
    Err(ReservoirError::DegenerateRecurrence { attempts: MAX_RESAMPLES })
}

impl EchoStateReservoir {
    /// Assembles a reservoir from explicit weights, used verbatim.
    pub fn from_weights(
        config: EsnConfig,
        seed: u64,
        w_in: DMatrix<f64>,
        w_rec: CsrMatrix,
    ) -> Result<Self, ReservoirError> {
        let n = config.size;
        if w_in.nrows() != n || w_in.ncols() != config.input_dim {
            return Err(ReservoirError::DimensionMismatch { expected: n * config.input_dim, got: w_in.len() });
        }
        if w_rec.nrows() != n || w_rec.ncols() != n {
            return Err(ReservoirError::DimensionMismatch { expected: n * n, got: w_rec.nrows() * w_rec.ncols() });
        }
        Ok(Self { config, seed, w_in, w_rec, state: DVector::zeros(n), drive: vec![0.0; n] })
    }

    pub fn config(&self) -> &EsnConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn size(&self) -> usize {
        self.config.size
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn input_weights(&self) -> &DMatrix<f64> {
        &self.w_in
    }

    pub fn recurrent_weights(&self) -> &CsrMatrix {
        &self.w_rec
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.state
    }

    pub fn set_state(&mut self, state: &[f64]) -> Result<(), ReservoirError> {
        if state.len() != self.size() {
            return Err(ReservoirError::DimensionMismatch { expected: self.size(), got: state.len() });
        }
        self.state.copy_from_slice(state);
        Ok(())
    }

    pub fn reset(&mut self) {
        self.state.fill(0.0);
    }

    /// Advances one step and returns the new state.
    pub fn step(&mut self, input: &[f64]) -> Result<&DVector<f64>, ReservoirError> {
        if input.len() != self.input_dim() {
            return Err(ReservoirError::DimensionMismatch { expected: self.input_dim(), got: input.len() });
        }
        self.w_rec.mul_vec_into(self.state.as_slice(), &mut self.drive);
        for (j, d) in self.drive.iter_mut().enumerate() {
            *d += input.iter().enumerate().map(|(c, x)| self.w_in[(j, c)] * x).sum::<f64>();
        }
        for (u, d) in self.state.iter_mut().zip(&self.drive) {
            *u = d.tanh();
        }
        Ok(&self.state)
    }

    /// Multiply-adds per step with the stored sparsity: `n s + nnz(W_rec)`.
    pub fn ops_per_step(&self) -> u64 {
        (self.size() * self.input_dim() + self.w_rec.nnz()) as u64
    }

    pub fn weights_digest(&self) -> [u8; 32] {
        weights_digest(&self.w_in, &self.w_rec)
    }
}

/// SHA-256 over the shapes and little-endian bytes of both weight matrices.
pub fn weights_digest(w_in: &DMatrix<f64>, w_rec: &CsrMatrix) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for dim in [w_in.nrows(), w_in.ncols(), w_rec.nrows(), w_rec.ncols(), w_rec.nnz()] {
        hasher.update((dim as u64).to_le_bytes());
    }
    for v in w_in.iter() {
        hasher.update(v.to_le_bytes());
    }
    for (r, c, v) in w_rec.triplets() {
        hasher.update((r as u64).to_le_bytes());
        hasher.update((c as u64).to_le_bytes());
        hasher.update(v.to_le_bytes());
    }
    hasher.finalize().into()
}

/// `esn_step` in free-function form.
pub fn esn_step<'a>(res: &'a mut EchoStateReservoir, input: &[f64]) -> Result<&'a DVector<f64>, ReservoirError> {
    res.step(input)
}

/// Dense-update cost `n s + density n^2` for an `n`-neuron reservoir.
pub fn esn_ops_model(n: usize, input_dim: usize, density: f64) -> u64 {
    (n * input_dim) as u64 + (density * (n * n) as f64).round() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_neuron_step_matches_hand_value() {
        let cfg = EsnConfig { size: 1, input_dim: 1, ..EsnConfig::default() };
        let mut res = EchoStateReservoir::from_weights(
            cfg,
            0,
            DMatrix::from_element(1, 1, 0.5),
            CsrMatrix::from_triplets(1, 1, &[(0, 0, 0.3)]),
        )
        .unwrap();
        res.set_state(&[0.2]).unwrap();
        let u = res.step(&[1.0]).unwrap()[0];
        assert_eq!(u, 0.56f64.tanh());
    }

    #[test]
    fn zero_input_from_zero_state_stays_zero() {
        let mut res = init_esn(&EsnConfig { size: 64, input_dim: 3, ..EsnConfig::default() }, 4).unwrap();
        res.step(&[0.0; 3]).unwrap();
        assert!(res.state().iter().all(|&u| u == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut res = init_esn(&EsnConfig { size: 8, input_dim: 3, ..EsnConfig::default() }, 1).unwrap();
        assert_eq!(res.step(&[0.0; 2]).unwrap_err(), ReservoirError::DimensionMismatch { expected: 3, got: 2 });
    }

    #[test]
    fn tiny_reservoirs_redraw_until_nonzero_radius() {
        for seed in 0..20 {
            let res = init_esn(&EsnConfig { size: 2, input_dim: 1, ..EsnConfig::default() }, seed).unwrap();
            let sr = spectral_radius(res.recurrent_weights()).unwrap();
            assert!((sr - 0.9).abs() < 1e-12);
        }
    }

    #[test]
    fn ops_example_for_1024_neurons() {
        assert_eq!(esn_ops_model(1024, 11, 0.1), 11_264 + 104_858);
        let res = init_esn(&EsnConfig { size: 1024, input_dim: 11, ..EsnConfig::default() }, 0).unwrap();
        assert_eq!(res.ops_per_step(), 11_264 + 104_858);
    }
}
