//! Spatial pricing of ride-sourcing services on congested networks.
//!
//! Drivers relocate by logit choice and all vehicles route by user
//! equilibrium ([`cda`]); the platform sets locational prices that balance
//! supply and demand ([`pricing`], [`walrasian`]) or maximize revenue.

pub mod cda;
pub mod error;
pub mod fixtures;
pub mod matching;
pub mod network;
pub mod oracles;
pub mod pricing;
pub mod walrasian;

pub use cda::{
    check_wardrop, driver_utility, logit_distribution, solve_cda, solve_diagonalized,
    total_travel_time, BackgroundDemand, CdaOptions, CdaProblem, DiagonalOptions,
    EquilibriumSolution, JointProblem, JointSolution, UtilityCoefficients, WaitModel,
    WardropReport,
};
pub use error::{Error, Result};
pub use matching::{
    augment_network, fit_wait_regression, rider_equilibrium, simulate_queue, wait_time,
    AugmentedNetwork, MatchingParams, QueueSimConfig, RiderCoefficients, WaitFit,
};
pub use network::{
    bpr_integral, bpr_time, load_network, shortest_path, Link, LinkCost, Network, Node, NodeKind,
    OdPair,
};
pub use pricing::{
    bisection_prices, excess_supply, fixed_point_prices, maximize_profit, profit,
    solve_single_level, uniform_clearing_price, DemandModel, ImbalanceReport, PriceSolution,
    PriceVector, PricingProblem,
};
pub use walrasian::{
    algorithm1, augmented_w, project_simplex, walrasian_w, SimplexPoint, WalrasSchedule,
    WalrasTrace,
};
