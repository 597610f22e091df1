//! Shared inputs for the solver benchmarks.

use rideprice::fixtures::{sioux_falls_pricing, three_node_pricing};
use rideprice::{CdaOptions, PricingProblem};

pub fn three_node() -> PricingProblem {
    three_node_pricing(CdaOptions::with_tol(1e-8)).expect("three-node fixture")
}

pub fn sioux_falls() -> PricingProblem {
    sioux_falls_pricing(0.6, CdaOptions::with_tol(1e-6)).expect("Sioux Falls fixture")
}

/// Deterministic pseudo-random vector in `[-1, 1)` for the simplex benches.
pub fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
    let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
    (0..n)
        .map(|_| {
            x = x
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (x >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect()
}
