//! Shared fixtures for the criterion benchmarks.

use nullstrap_core::prelude::*;

/// One simulated two-group dataset at the given scale.
pub fn dataset(n: usize, m: usize, seed: u64) -> (CountMatrix, DesignInfo, SizeFactors) {
    let config = SimulationConfig {
        n,
        m,
        pi_de: 0.1,
        fc: 3.0,
        seed,
        ..Default::default()
    };
    let (counts, design, _) = generate_dataset(&config, 0).expect("valid config");
    let s = estimate_size_factors(&counts).expect("reference genes");
    (counts, design, s)
}
