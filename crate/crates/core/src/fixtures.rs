//! Built-in test instances: the three-node network and Sioux Falls.

use std::sync::Arc;

use crate::cda::{CdaOptions, CdaProblem, JointProblem, UtilityCoefficients, WaitModel};
use crate::error::Result;
use crate::matching::{augment_network, RiderCoefficients, WaitFit};
use crate::network::{load_network, Network, NodeId};
use crate::pricing::{DemandModel, PricingProblem};

pub const THREE_NODE_NET: &str = include_str!("../data/three_node.net");
pub const SIOUX_FALLS_NET: &str = include_str!("../data/sioux_falls.net");

/// Reference wait-time coefficients reported for the queue regression.
pub const REFERENCE_WAIT: (f64, f64, f64) = (6.29, 2.24, -2.40);

/// Rider attractiveness `beta0'` of the joint fixtures. Shifts every
/// balancing price by `beta0' / beta2'` relative to `beta0' = 0`.
pub const RIDER_ATTRACTIVENESS: f64 = 24.0;

pub fn three_node_network() -> Network {
    load_network(THREE_NODE_NET).expect("bundled three-node network parses")
}

pub fn sioux_falls_network() -> Network {
    load_network(SIOUX_FALLS_NET).expect("bundled Sioux Falls network parses")
}

/// Node 1 supplies 50 drivers to markets 2 and 3 (0-based 0, 1, 2).
pub fn three_node_cda(prices: [f64; 2], beta2: f64) -> Result<CdaProblem> {
    CdaProblem::new(
        Arc::new(three_node_network()),
        vec![(0, 50.0)],
        vec![1, 2],
        prices.to_vec(),
        UtilityCoefficients::uniform(2, 0.0, 1.0, beta2)?,
    )
}

/// Three-node balancing problem with `d_s = 300 - 5 rho_s`.
pub fn three_node_pricing(cda_options: CdaOptions) -> Result<PricingProblem> {
    PricingProblem::new(
        three_node_cda([55.0, 55.0], 0.6)?,
        DemandModel::uniform(2, 300.0, 5.0)?,
        cda_options,
    )
}

/// Sioux Falls driver nodes (odd labels) and rider nodes (even labels),
/// 0-based.
pub fn sioux_falls_nodes() -> (Vec<NodeId>, Vec<NodeId>) {
    ((0..24).step_by(2).collect(), (1..24).step_by(2).collect())
}

/// Twelve driver nodes with 50 drivers each and `d_s = 300 - 5 rho_s` at
/// twelve rider nodes.
pub fn sioux_falls_pricing(beta2: f64, cda_options: CdaOptions) -> Result<PricingProblem> {
    let (drivers, riders) = sioux_falls_nodes();
    let s = riders.len();
    let cda = CdaProblem::new(
        Arc::new(sioux_falls_network()),
        drivers.iter().map(|&r| (r, 50.0)).collect(),
        riders,
        vec![50.0; s],
        UtilityCoefficients::uniform(s, 0.0, 1.0, beta2)?,
    )?;
    PricingProblem::new(cda, DemandModel::uniform(s, 300.0, 5.0)?, cda_options)
}

fn reference_wait() -> WaitModel {
    let (a0, a1, a2) = REFERENCE_WAIT;
    let fit = WaitFit::with_coefficients(a0, a1, a2);
    WaitModel {
        driver: fit,
        rider: fit,
    }
}

/// Three-node matching instance: 300 potential travelers per market and
/// rider coefficients `(RIDER_ATTRACTIVENESS, 1, 0.6)`.
pub fn three_node_joint(prices: [f64; 2]) -> Result<JointProblem> {
    let aug = augment_network(&three_node_network(), &[1, 2])?;
    Ok(JointProblem {
        augmented: Arc::new(aug),
        origins: vec![(0, 50.0)],
        prices: prices.to_vec(),
        driver_coeffs: UtilityCoefficients::uniform(2, 0.0, 1.0, 0.6)?,
        rider_coeffs: RiderCoefficients::new(RIDER_ATTRACTIVENESS, 1.0, 0.6)?,
        potential_riders: vec![300.0; 2],
        wait: reference_wait(),
    })
}

pub fn sioux_falls_joint(prices: &[f64]) -> Result<JointProblem> {
    let (drivers, riders) = sioux_falls_nodes();
    let s = riders.len();
    let aug = augment_network(&sioux_falls_network(), &riders)?;
    Ok(JointProblem {
        augmented: Arc::new(aug),
        origins: drivers.iter().map(|&r| (r, 50.0)).collect(),
        prices: prices.to_vec(),
        driver_coeffs: UtilityCoefficients::uniform(s, 0.0, 1.0, 0.6)?,
        rider_coeffs: RiderCoefficients::new(RIDER_ATTRACTIVENESS, 1.0, 0.6)?,
        potential_riders: vec![300.0; s],
        wait: reference_wait(),
    })
}
