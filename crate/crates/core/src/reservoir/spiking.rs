//! Leaky integrate-and-fire reservoir driven by rate-coding encoder pairs.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::esn::{sample_sparse_normal, weights_digest};
use super::{CsrMatrix, ReservoirError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LifParams {
    /// Membrane time constant, s.
    pub tau_m: f64,
    pub resistance: f64,
    pub v_reset: f64,
    pub v_threshold: f64,
    /// Refractory period, s.
    pub tau_ref: f64,
    /// Integration step, s.
    pub dt: f64,
    /// Presentation window per control step, s.
    pub window: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        Self { tau_m: 0.02, resistance: 1.0, v_reset: 0.0, v_threshold: 1.0, tau_ref: 0.002, dt: 0.001, window: 0.05 }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<(), ReservoirError> {
        let bad = |field, reason: &str| Err(ReservoirError::InvalidConfig { field, reason: reason.into() });
        if !(self.tau_m > 0.0) {
            return bad("tau_m", "must be positive");
        }
        if !(self.dt > 0.0 && self.dt < self.tau_m) {
            return bad("dt", "must lie in (0, tau_m)");
        }
        if !(self.tau_ref >= 0.0) {
            return bad("tau_ref", "must be non-negative");
        }
        if !(self.v_threshold > self.v_reset) {
            return bad("v_threshold", "must exceed v_reset");
        }
        if !(self.window >= self.dt) {
            return bad("window", "must cover at least one step");
        }
        Ok(())
    }

    /// Neural steps per presentation window.
    pub fn steps_per_window(&self) -> usize {
        (self.window / self.dt).round() as usize
    }

    /// Upper bound on spikes per neuron per window. A spike at the first
    /// step of a window counts, hence the ceiling.
    pub fn max_spikes_per_window(&self) -> u32 {
        let period = self.refractory_steps() + 1;
        self.steps_per_window().div_ceil(period) as u32
    }

    fn refractory_steps(&self) -> usize {
        (self.tau_ref / self.dt).round() as usize
    }

    /// Steady firing rate of the continuous-time model under constant
    /// current, Hz.
    pub fn analytic_rate(&self, current: f64) -> f64 {
        let drive = self.resistance * current;
        let gap = self.v_threshold - self.v_reset;
        if drive <= gap {
            return 0.0;
        }
        1.0 / (self.tau_ref + self.tau_m * (drive / (drive - gap)).ln())
    }
}

/// Membrane state of a population of LIF neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct LifPopulation {
    pub v: Vec<f64>,
    /// Remaining refractory time, s.
    pub refractory: Vec<f64>,
}

impl LifPopulation {
    pub fn new(n: usize, params: &LifParams) -> Self {
        Self { v: vec![params.v_reset; n], refractory: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn reset(&mut self, params: &LifParams) {
        self.v.fill(params.v_reset);
        self.refractory.fill(0.0);
    }
}

/// One exponential-Euler step. Indices of neurons that fired are written to
/// `spikes`; afterwards every `v <= v_threshold`.
pub fn lif_step(pop: &mut LifPopulation, params: &LifParams, current: &[f64], spikes: &mut Vec<usize>) {
    debug_assert_eq!(current.len(), pop.len());
    spikes.clear();
    let decay = (-params.dt / params.tau_m).exp();
    for (i, ((v, rest), &input)) in pop.v.iter_mut().zip(pop.refractory.iter_mut()).zip(current).enumerate() {
        if *rest > 0.5 * params.dt {
            *rest -= params.dt;
            *v = params.v_reset;
            continue;
        }
        *rest = 0.0;
        let target = params.v_reset + params.resistance * input;
        *v = target + (*v - target) * decay;
        if *v > params.v_threshold {
            spikes.push(i);
            *v = params.v_reset;
            *rest = params.tau_ref;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpikingConfig {
    pub size: usize,
    /// Analog inputs; the encoder has two neurons per input.
    pub input_dim: usize,
    pub density: f64,
    pub weight_std: f64,
    pub lif: LifParams,
    /// Peak encoder drive `c`: channels receive `c (1 + x) / 2` and
    /// `c (1 - x) / 2`.
    pub encoder_current: f64,
    /// Current injected for one step per encoder spike, per unit weight.
    pub input_gain: f64,
    /// Current per recurrent spike per unit weight, before division by the
    /// square root of the expected in-degree.
    pub recurrent_gain: f64,
    /// Constant background current to every reservoir neuron.
    pub bias_current: f64,
    /// `[lo, hi]` per input mapped to `[-1, 1]`; empty means identity.
    pub input_ranges: Vec<[f64; 2]>,
}

impl Default for SpikingConfig {
    fn default() -> Self {
        Self {
            size: 256,
            input_dim: 11,
            density: 0.1,
            weight_std: 0.5,
            lif: LifParams::default(),
            encoder_current: 7.2,
            input_gain: 6.0,
            recurrent_gain: 12.0,
            bias_current: 0.0,
            input_ranges: Vec::new(),
        }
    }
}

impl SpikingConfig {
    pub fn validate(&self) -> Result<(), ReservoirError> {
        let bad = |field, reason: &str| Err(ReservoirError::InvalidConfig { field, reason: reason.into() });
        self.lif.validate()?;
        if self.size == 0 || self.input_dim == 0 {
            return bad("size", "reservoir and input must be non-empty");
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return bad("density", "must lie in (0, 1]");
        }
        if !(self.weight_std > 0.0) {
            return bad("weight_std", "must be positive");
        }
        if !self.input_ranges.is_empty() {
            if self.input_ranges.len() != self.input_dim {
                return bad("input_ranges", "need one range per input");
            }
            if self.input_ranges.iter().any(|[lo, hi]| !(hi > lo)) {
                return bad("input_ranges", "each range needs hi > lo");
            }
        }
        Ok(())
    }

    /// Current per recurrent spike per unit weight.
    pub fn recurrent_scale(&self) -> f64 {
        self.recurrent_gain / (self.density * self.size as f64).max(1.0).sqrt()
    }
}

/// Pairs of oppositely tuned encoder neurons.
#[derive(Debug, Clone)]
pub struct SpikeEncoder {
    ranges: Vec<[f64; 2]>,
    peak_current: f64,
    neurons: LifPopulation,
    currents: Vec<f64>,
}

impl SpikeEncoder {
    pub fn new(input_dim: usize, ranges: Vec<[f64; 2]>, peak_current: f64, params: &LifParams) -> Self {
        Self {
            ranges,
            peak_current,
            neurons: LifPopulation::new(2 * input_dim, params),
            currents: vec![0.0; 2 * input_dim],
        }
    }

    pub fn channels(&self) -> usize {
        self.neurons.len()
    }

    /// Maps a raw input to `[-1, 1]`, clamping out-of-range values.
    pub fn normalize(&self, index: usize, raw: f64) -> f64 {
        let x = match self.ranges.get(index) {
            Some([lo, hi]) => 2.0 * (raw - lo) / (hi - lo) - 1.0,
            None => raw,
        };
        if !(-1.0..=1.0).contains(&x) {
            log::warn!("encoder input {index} = {raw} saturates");
        }
        x.clamp(-1.0, 1.0)
    }

    /// Sets channel currents for the next window. Channel `2i` increases
    /// with input `i`, channel `2i + 1` decreases.
    pub fn set_input(&mut self, input: &[f64]) {
        for (i, &raw) in input.iter().enumerate() {
            let x = self.normalize(i, raw);
            self.currents[2 * i] = self.peak_current * (1.0 + x) / 2.0;
            self.currents[2 * i + 1] = self.peak_current * (1.0 - x) / 2.0;
        }
    }

    pub fn step(&mut self, params: &LifParams, spikes: &mut Vec<usize>) {
        lif_step(&mut self.neurons, params, &self.currents, spikes);
    }

    pub fn reset(&mut self, params: &LifParams) {
        self.neurons.reset(params);
    }

    /// Runs the encoder alone for one window and returns per-channel counts.
    pub fn encode_window(&mut self, params: &LifParams, input: &[f64]) -> Vec<u32> {
        self.set_input(input);
        let mut counts = vec![0; self.channels()];
        let mut spikes = Vec::new();
        for _ in 0..params.steps_per_window() {
            self.step(params, &mut spikes);
            spikes.iter().for_each(|&c| counts[c] += 1);
        }
        counts
    }
}

/// Synapse activations during the last window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SynapticOps {
    /// From encoder spikes into the reservoir.
    pub input: u64,
    /// From reservoir spikes along recurrent synapses.
    pub recurrent: u64,
}

impl SynapticOps {
    pub fn total(&self) -> u64 {
        self.input + self.recurrent
    }
}

#[derive(Debug, Clone)]
pub struct SpikingReservoir {
    config: SpikingConfig,
    seed: u64,
    /// `n x 2s`, dense.
    w_in: DMatrix<f64>,
    w_rec: CsrMatrix,
    /// Transpose of `w_rec`: row `i` lists the targets of neuron `i`.
    fan_out: CsrMatrix,
    encoder: SpikeEncoder,
    neurons: LifPopulation,
    /// Synaptic current for the next step from this step's spikes.
    pending: Vec<f64>,
    current: Vec<f64>,
    counts: Vec<u32>,
    ops: SynapticOps,
}

pub fn init_spiking(config: &SpikingConfig, seed: u64) -> Result<SpikingReservoir, ReservoirError> {
    config.validate()?;
    let (n, s) = (config.size, config.input_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = Uniform::new_inclusive(-1.0, 1.0);
    let w_in = DMatrix::from_fn(n, 2 * s, |_, _| uniform.sample(&mut rng));
    let normal = Normal::new(0.0, config.weight_std).expect("validated std");
    let w_rec = sample_sparse_normal(&mut rng, n, n, config.density, &normal);
    SpikingReservoir::from_weights(config.clone(), seed, w_in, w_rec)
}

impl SpikingReservoir {
    pub fn from_weights(
        config: SpikingConfig,
        seed: u64,
        w_in: DMatrix<f64>,
        w_rec: CsrMatrix,
    ) -> Result<Self, ReservoirError> {
        config.validate()?;
        let (n, s) = (config.size, config.input_dim);
        if w_in.nrows() != n || w_in.ncols() != 2 * s {
            return Err(ReservoirError::DimensionMismatch { expected: 2 * n * s, got: w_in.len() });
        }
        if w_rec.nrows() != n || w_rec.ncols() != n {
            return Err(ReservoirError::DimensionMismatch { expected: n * n, got: w_rec.nrows() * w_rec.ncols() });
        }
        let encoder = SpikeEncoder::new(s, config.input_ranges.clone(), config.encoder_current, &config.lif);
        let neurons = LifPopulation::new(n, &config.lif);
        Ok(Self {
            fan_out: w_rec.transpose(),
            config,
            seed,
            w_in,
            w_rec,
            encoder,
            neurons,
            pending: vec![0.0; n],
            current: vec![0.0; n],
            counts: vec![0; n],
            ops: SynapticOps::default(),
        })
    }

    pub fn config(&self) -> &SpikingConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn size(&self) -> usize {
        self.config.size
    }

    pub fn input_weights(&self) -> &DMatrix<f64> {
        &self.w_in
    }

    pub fn recurrent_weights(&self) -> &CsrMatrix {
        &self.w_rec
    }

    pub fn neurons(&self) -> &LifPopulation {
        &self.neurons
    }

    /// Spike counts of the last window.
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Synapse activations of the last window.
    pub fn last_ops(&self) -> SynapticOps {
        self.ops
    }

    pub fn out_degree(&self, neuron: usize) -> usize {
        self.fan_out.row_len(neuron)
    }

    pub fn reset(&mut self) {
        self.neurons.reset(&self.config.lif);
        self.encoder.reset(&self.config.lif);
        self.pending.fill(0.0);
        self.counts.fill(0);
        self.ops = SynapticOps::default();
    }

    /// Presents one input vector for a window and returns the reservoir
    /// spike counts. Membrane and synaptic state carry over between windows.
    pub fn forward(&mut self, input: &[f64]) -> Result<&[u32], ReservoirError> {
        if input.len() != self.config.input_dim {
            return Err(ReservoirError::DimensionMismatch { expected: self.config.input_dim, got: input.len() });
        }
        let params = self.config.lif;
        let input_gain = self.config.input_gain;
        let recurrent_scale = self.config.recurrent_scale();
        self.encoder.set_input(input);
        self.counts.fill(0);
        self.ops = SynapticOps::default();
        let mut encoder_spikes = Vec::new();
        let mut spikes = Vec::new();
        for _ in 0..params.steps_per_window() {
            self.encoder.step(&params, &mut encoder_spikes);
            for (i, c) in self.current.iter_mut().enumerate() {
                *c = self.config.bias_current + self.pending[i];
            }
            lif_step(&mut self.neurons, &params, &self.current, &mut spikes);

            self.pending.fill(0.0);
            for &ch in &encoder_spikes {
                for (p, w) in self.pending.iter_mut().zip(self.w_in.column(ch).iter()) {
                    *p += input_gain * w;
                }
                self.ops.input += self.config.size as u64;
            }
            for &i in &spikes {
                self.counts[i] += 1;
                for (j, w) in self.fan_out.row(i) {
                    self.pending[j] += recurrent_scale * w;
                }
                self.ops.recurrent += self.fan_out.row_len(i) as u64;
            }
        }
        Ok(&self.counts)
    }

    /// Counts scaled to `[0, 1]` by the per-window bound.
    pub fn rates(&self) -> Vec<f64> {
        let cap = self.config.lif.max_spikes_per_window() as f64;
        self.counts.iter().map(|&c| c as f64 / cap).collect()
    }

    pub fn weights_digest(&self) -> [u8; 32] {
        weights_digest(&self.w_in, &self.w_rec)
    }
}

/// `spiking_forward` in free-function form.
pub fn spiking_forward<'a>(res: &'a mut SpikingReservoir, input: &[f64]) -> Result<&'a [u32], ReservoirError> {
    res.forward(input)
}

/// Synapse activations of the last window, `sum over spikes of out-degree`.
pub fn count_synaptic_ops(res: &SpikingReservoir) -> SynapticOps {
    res.last_ops()
}
