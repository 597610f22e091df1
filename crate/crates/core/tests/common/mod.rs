#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rideprice::{
    CdaOptions, CdaProblem, DemandModel, EquilibriumSolution, Link, Network, OdPair,
    PricingProblem, UtilityCoefficients,
};

pub const FIVE_NODE_SEED: u64 = 20_240_517;

/// Directed links of the five-node instance: origins 0 and 1 feed
/// destinations 2 and 3, which both lead on to destination 4.
const FIVE_NODE_LINKS: [(usize, usize); 14] = [
    (0, 1),
    (1, 0),
    (0, 2),
    (0, 3),
    (1, 2),
    (1, 3),
    (2, 3),
    (3, 2),
    (2, 4),
    (3, 4),
    (4, 2),
    (4, 3),
    (2, 0),
    (3, 1),
];

/// Five-node instance with random BPR parameters on a fixed topology where
/// every destination is reachable by several routes.
pub fn five_node_pricing(seed: u64, beta2: f64) -> PricingProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let links: Vec<Link> = FIVE_NODE_LINKS
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| {
            let t0 = rng.random_range(5.0..15.0);
            let cap = rng.random_range(15.0..40.0);
            let power = if rng.random_bool(0.5) { 2 } else { 4 };
            Link::bpr(i, a, b, t0, cap, power)
        })
        .collect();
    let net = Network::new(5, links).unwrap();
    let q0 = rng.random_range(60.0..100.0);
    let q1 = rng.random_range(60.0..100.0);
    let intercept: Vec<f64> = (0..3).map(|_| rng.random_range(150.0..250.0)).collect();
    let slope: Vec<f64> = (0..3).map(|_| rng.random_range(3.0..6.0)).collect();
    let cda = CdaProblem::new(
        Arc::new(net),
        vec![(0, q0), (1, q1)],
        vec![2, 3, 4],
        vec![30.0; 3],
        UtilityCoefficients::new(vec![0.0, 0.5, -0.5], 1.0, beta2).unwrap(),
    )
    .unwrap();
    PricingProblem::new(
        cda,
        DemandModel::new(intercept, slope).unwrap(),
        CdaOptions::with_tol(1e-8),
    )
    .unwrap()
}

/// Fixed OD demands implied by a CDA solution's relocation flows.
pub fn frozen_demands(problem: &CdaProblem, sol: &EquilibriumSolution) -> Vec<(OdPair, f64)> {
    let mut out = Vec::new();
    for (i, &(r, _)) in problem.origins.iter().enumerate() {
        for (j, &s) in problem.destinations.iter().enumerate() {
            if r != s {
                out.push((OdPair::new(r, s), sol.q[i][j]));
            }
        }
    }
    out
}

/// Largest relative deviation of `q_rs / q_rs'` from `exp(U_rs - U_rs')`.
pub fn logit_ratio_error(problem: &CdaProblem, sol: &EquilibriumSolution) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, _) in problem.origins.iter().enumerate() {
        let u: Vec<f64> = (0..problem.destinations.len())
            .map(|s| problem.coeffs.utility(s, sol.t_od[i][s], problem.prices[s]))
            .collect();
        for a in 0..u.len() {
            for b in 0..u.len() {
                if a != b && sol.q[i][b] > 0.0 {
                    let expected = (u[a] - u[b]).exp();
                    let got = sol.q[i][a] / sol.q[i][b];
                    worst = worst.max((got / expected - 1.0).abs());
                }
            }
        }
    }
    worst
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
