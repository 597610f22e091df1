//! Combined distribution and assignment (CDA) of ride-sourcing drivers.
//!
//! Given locational prices, drivers at each origin choose a pick-up location
//! by multinomial logit on `beta0_s - beta1 * t_rs + beta2 * rho_s`, while all
//! vehicles route by Wardrop user equilibrium. Both conditions are the
//! optimality conditions of one strictly convex program, solved here by
//! Evans' partial linearization ([`solve_cda`]).

mod diagonal;
mod evans;
mod wardrop;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};
use crate::network::{LinkCost, Network, NodeId};

pub use diagonal::{solve_diagonalized, DiagonalOptions, JointProblem, JointSolution, WaitModel};
pub use evans::{solve_cda, CdaOptions};
pub use wardrop::{check_wardrop, OdExcess, WardropReport};

/// Drivers' utility coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityCoefficients {
    /// Attractiveness per destination (utils), aligned with the problem's
    /// destination list.
    pub beta0: Vec<f64>,
    /// Time coefficient (utils/min), positive.
    pub beta1: f64,
    /// Price coefficient (utils/$).
    pub beta2: f64,
}

impl UtilityCoefficients {
    pub fn new(beta0: Vec<f64>, beta1: f64, beta2: f64) -> Result<Self> {
        if !(beta1 > 0.0) {
            return Err(config(format!("beta1 must be positive, found {beta1}")));
        }
        if !beta2.is_finite() || beta0.iter().any(|b| !b.is_finite()) {
            return Err(config("utility coefficients must be finite"));
        }
        Ok(UtilityCoefficients {
            beta0,
            beta1,
            beta2,
        })
    }

    /// Same attractiveness at every one of `destinations`.
    pub fn uniform(destinations: usize, beta0: f64, beta1: f64, beta2: f64) -> Result<Self> {
        Self::new(vec![beta0; destinations], beta1, beta2)
    }

    pub fn utility(&self, s: usize, t_rs: f64, rho_s: f64) -> f64 {
        driver_utility(self, s, t_rs, rho_s)
    }
}

/// Deterministic utility of relocating to destination index `s`.
pub fn driver_utility(coeffs: &UtilityCoefficients, s: usize, t_rs: f64, rho_s: f64) -> f64 {
    coeffs.beta0[s] - coeffs.beta1 * t_rs + coeffs.beta2 * rho_s
}

/// Splits `total` drivers across destinations by multinomial logit.
pub fn logit_distribution(utilities: &[f64], total: f64) -> Result<Vec<f64>> {
    if utilities.is_empty() {
        return Err(domain("logit over an empty destination set"));
    }
    if !(total >= 0.0) {
        return Err(domain(format!(
            "driver total must be non-negative, found {total}"
        )));
    }
    let mut out = vec![0.0; utilities.len()];
    logit_into(utilities, total, &mut out);
    Ok(out)
}

pub(crate) fn logit_into(utilities: &[f64], total: f64, out: &mut [f64]) {
    let max = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &u) in out.iter_mut().zip(utilities) {
        *o = (u - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o *= total / sum;
    }
}

/// Fixed background traffic leaving `origin`: `shares` gives `(k, delta_sk)`
/// and the flow to `k` is `delta_sk * total`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundDemand {
    pub origin: NodeId,
    pub total: f64,
    pub shares: Vec<(NodeId, f64)>,
}

/// Lower-level problem at fixed prices.
#[derive(Clone, Debug)]
pub struct CdaProblem {
    pub network: Arc<Network>,
    /// `(r, Q_r)` driver availability per origin.
    pub origins: Vec<(NodeId, f64)>,
    pub destinations: Vec<NodeId>,
    /// Price per destination, aligned with `destinations`.
    pub prices: Vec<f64>,
    pub coeffs: UtilityCoefficients,
    pub background: Vec<BackgroundDemand>,
    /// Cost function per link; defaults to the network's own.
    pub link_costs: Vec<LinkCost>,
}

impl CdaProblem {
    pub fn new(
        network: Arc<Network>,
        origins: Vec<(NodeId, f64)>,
        destinations: Vec<NodeId>,
        prices: Vec<f64>,
        coeffs: UtilityCoefficients,
    ) -> Result<Self> {
        let n = network.node_count();
        if origins.is_empty() || destinations.is_empty() {
            return Err(config(
                "at least one origin and one destination are required",
            ));
        }
        if origins
            .iter()
            .any(|&(r, q)| r >= n || !(q >= 0.0) || !q.is_finite())
        {
            return Err(config("driver origins must be valid nodes with Q_r >= 0"));
        }
        if origins.iter().map(|o| o.1).sum::<f64>() <= 0.0 {
            return Err(config("total driver supply must be positive"));
        }
        if destinations.iter().any(|&s| s >= n) {
            return Err(config("destination outside the network"));
        }
        if coeffs.beta0.len() != destinations.len() {
            return Err(config("one beta0 per destination is required"));
        }
        for &(r, _) in &origins {
            let reach = network.reachable_from(r);
            if let Some(&s) = destinations.iter().find(|&&s| !reach[s]) {
                return Err(config(format!(
                    "destination {} is unreachable from origin {}",
                    network.label(s),
                    network.label(r)
                )));
            }
        }
        let link_costs = network.default_costs();
        let mut p = CdaProblem {
            network,
            origins,
            destinations,
            prices: Vec::new(),
            coeffs,
            background: Vec::new(),
            link_costs,
        };
        p.set_prices(prices)?;
        Ok(p)
    }

    pub fn with_background(mut self, background: Vec<BackgroundDemand>) -> Result<Self> {
        let n = self.network.node_count();
        for b in &background {
            if b.origin >= n || !(b.total >= 0.0) {
                return Err(config(
                    "background origin must be a node with non-negative total",
                ));
            }
            let reach = self.network.reachable_from(b.origin);
            let mut share_sum = 0.0;
            for &(k, d) in &b.shares {
                if k >= n || !reach[k] {
                    return Err(config("background destination unreachable"));
                }
                if !(d >= 0.0) {
                    return Err(config("background shares must be non-negative"));
                }
                share_sum += d;
            }
            if share_sum > 1.0 + 1e-12 {
                return Err(config("background shares of one origin exceed 1"));
            }
        }
        self.background = background;
        Ok(self)
    }

    pub fn set_prices(&mut self, prices: Vec<f64>) -> Result<()> {
        if prices.len() != self.destinations.len() || prices.iter().any(|p| !p.is_finite()) {
            return Err(config("one finite price per destination is required"));
        }
        self.prices = prices;
        Ok(())
    }

    pub fn with_prices(&self, prices: &[f64]) -> Result<Self> {
        let mut p = self.clone();
        p.set_prices(prices.to_vec())?;
        Ok(p)
    }

    pub fn total_supply(&self) -> f64 {
        self.origins.iter().map(|o| o.1).sum()
    }

    pub fn od_index(&self, r: usize, s: usize) -> usize {
        r * self.destinations.len() + s
    }

    /// Objective of the convex program at `(q, v)`.
    pub fn objective(&self, q: &[Vec<f64>], v: &[f64]) -> f64 {
        let beckmann: f64 = self
            .link_costs
            .iter()
            .zip(v)
            .map(|(c, &x)| c.integral(x))
            .sum();
        let mut entropy = 0.0;
        for row in q {
            for (s, &x) in row.iter().enumerate() {
                entropy += self.entropy_term(s, x);
            }
        }
        beckmann + entropy
    }

    #[inline]
    pub(crate) fn entropy_term(&self, s: usize, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let c = &self.coeffs;
        x * (x.ln() - 1.0 - c.beta2 * self.prices[s] - c.beta0[s]) / c.beta1
    }
}

/// Equilibrium of one CDA problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    /// Relocation flows `q[r][s]`.
    pub q: Vec<Vec<f64>>,
    /// Link flows per driver OD pair, indexed by [`CdaProblem::od_index`].
    pub od_link_flows: Vec<Vec<f64>>,
    /// Link flows per background OD, in declaration order.
    pub background_link_flows: Vec<Vec<f64>>,
    /// Aggregate link flows.
    pub v: Vec<f64>,
    /// Shortest travel times `t[r][s]` at the returned flows.
    pub t_od: Vec<Vec<f64>>,
    pub objective: f64,
    pub rel_gap: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after each iteration.
    pub objective_trace: Vec<f64>,
}

impl EquilibriumSolution {
    /// Drivers arriving at each destination, `sum_r q_rs`.
    pub fn supply(&self) -> Vec<f64> {
        let s_count = self.q.first().map_or(0, Vec::len);
        let mut out = vec![0.0; s_count];
        for row in &self.q {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        out
    }
}

/// Vehicle-minutes on road (BPR) links, `sum_a v_a * t_a(v_a)`.
pub fn total_travel_time(solution: &EquilibriumSolution, network: &Network) -> f64 {
    network
        .links()
        .iter()
        .zip(&solution.v)
        .filter(|(l, _)| l.cost_kind == crate::network::CostKind::Bpr)
        .map(|(l, &x)| x * l.cost().time(x))
        .sum()
}
