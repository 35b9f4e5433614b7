use serde::{Deserialize, Serialize};

use super::{init_esn, init_spiking, EsnConfig, ReservoirError, SpikingConfig};

/// Synapse activations per control step at one reservoir size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpCount {
    pub size: usize,
    /// ESN step with the stored sparsity: `n s + nnz(W_rec)`.
    pub esn_ops: u64,
    /// ESN step with a dense recurrent product: `n s + n^2`.
    pub esn_dense_ops: u64,
    /// Spiking window: recurrent synapses reached by reservoir spikes, mean
    /// over the probe inputs.
    pub spiking_ops: f64,
    /// Mean reservoir firing rate during the probe, Hz.
    pub spiking_rate: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Counts operations for each size by running freshly seeded reservoirs on
/// the same input sequence. Spiking reservoirs start from rest and the first
/// window is not counted.
pub fn count_ops(
    sizes: &[usize],
    esn: &EsnConfig,
    spiking: &SpikingConfig,
    seed: u64,
    inputs: &[Vec<f64>],
) -> Result<Vec<OpCount>, ReservoirError> {
    sizes
        .iter()
        .map(|&size| {
            let mut e = init_esn(&EsnConfig { size, ..esn.clone() }, seed)?;
            let mut s = init_spiking(&SpikingConfig { size, ..spiking.clone() }, seed)?;
            let mut esn_ops = 0;
            let esn_dense_ops = (size * e.input_dim() + size * size) as u64;
            let mut ops = 0u64;
            let mut spikes = 0u64;
            for (k, x) in inputs.iter().enumerate() {
                e.step(x)?;
                esn_ops = e.ops_per_step();
                let counts = s.forward(x)?;
                if k > 0 {
                    spikes += counts.iter().map(|&c| c as u64).sum::<u64>();
                    ops += s.last_ops().recurrent;
                }
            }
            let windows = inputs.len().saturating_sub(1).max(1) as f64;
            Ok(OpCount {
                size,
                esn_ops,
                esn_dense_ops,
                spiking_ops: ops as f64 / windows,
                spiking_rate: spikes as f64 / (windows * size as f64 * spiking.lif.window),
            })
        })
        .collect()
}

/// Deterministic probe inputs in `[-1, 1]`: slow sinusoids, one phase per
/// channel.
pub fn probe_inputs(dim: usize, windows: usize) -> Vec<Vec<f64>> {
    (0..windows).map(|k| (0..dim).map(|i| (0.3 * k as f64 + 0.7 * i as f64).sin()).collect()).collect()
}
