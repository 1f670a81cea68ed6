//! Experiment runner for collective-learning GNNs: synthetic benchmarks,
//! paired trials with significance tests, and the expressiveness battery.

pub mod battery;
pub mod config;
pub mod experiment;
pub mod metrics;
pub mod stats;
pub mod synth;

use rand::SeedableRng;

pub fn rng(seed: u64) -> clgnn::Rng {
    clgnn::Rng::seed_from_u64(seed)
}
