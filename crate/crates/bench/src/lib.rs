//! Shared fixtures for the benchmarks.

use encrypto_core::harness::synthetic_blocks;
use encrypto_core::{DataBlock, SessionConfig};

/// A session with `n` parties and `x` packets of 32 bytes each.
pub fn session(n: usize, x: usize) -> (SessionConfig, Vec<DataBlock>) {
    let config = SessionConfig::new(n, 4, x, 32, 0xbe9c_0000 ^ (n * 64 + x) as u64);
    let blocks = synthetic_blocks(&config, config.master_seed);
    (config, blocks)
}
