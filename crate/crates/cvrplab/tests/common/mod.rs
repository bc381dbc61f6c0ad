//! Helpers shared by the integration test suites.
#![allow(dead_code)]

use cvrplab::instances::{generate, GenConfig};
use cvrplab::model::Instance;

/// Uniform random instance with the default demand and capacity
/// conventions for its size.
pub fn random_instance(n: usize, seed: u64) -> Instance {
    generate(&GenConfig::for_size(n, seed)).expect("generation succeeds")
}

/// Uniform random instance with a capacity tight enough that several
/// routes are needed.
pub fn tight_instance(n: usize, seed: u64) -> Instance {
    let mut config = GenConfig::for_size(n, seed);
    config.capacity = 12.0;
    generate(&config).expect("generation succeeds")
}

/// Relative error with a unit floor, so tiny absolute values compare
/// absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
