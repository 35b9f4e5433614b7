pub mod blind;
pub mod eval;
pub mod opcount;
pub mod selfmodel;
pub mod sweep;
pub mod train;

/// First target seed of evaluation episodes. Training draws its episode
/// seeds uniformly from all of `u64`, so overlap with this block is
/// negligible.
pub const EVAL_SEED_BASE: u64 = 1 << 40;

/// Target seed of the periodic training traces.
pub const TRACE_SEED: u64 = EVAL_SEED_BASE - 1;

pub fn eval_seeds(n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| EVAL_SEED_BASE + i).collect()
}
