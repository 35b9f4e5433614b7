use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics, Statistics};

/// Location and spread of a sample of episode returns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnSummary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator).
    pub std_dev: f64,
    pub std_error: f64,
    pub median: f64,
    pub iqr: f64,
}

impl ReturnSummary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.mean();
        let std_dev = if n > 1 { values.std_dev() } else { 0.0 };
        let mut data = Data::new(values.to_vec());
        Self {
            n,
            mean,
            std_dev,
            std_error: std_dev / (n as f64).sqrt(),
            median: data.median(),
            iqr: data.interquartile_range(),
        }
    }
}
