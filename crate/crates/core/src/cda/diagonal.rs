use std::sync::Arc;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::{solve_cda, CdaOptions, CdaProblem, EquilibriumSolution, UtilityCoefficients};
use crate::error::{config, Result};
use crate::matching::{
    rider_equilibrium, AugmentedNetwork, RiderCoefficients, WaitFit, FLOW_FLOOR,
};
use crate::network::{LinkCost, NodeId};

/// Fitted wait models for both sides of every market.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaitModel {
    /// `t_D = a0 * f_D^a1 * f_R^a2`.
    pub driver: WaitFit,
    /// `t_R = a0 * f_R^a1 * f_D^a2`.
    pub rider: WaitFit,
}

/// Joint driver/rider equilibrium on an augmented network.
#[derive(Clone, Debug)]
pub struct JointProblem {
    pub augmented: Arc<AugmentedNetwork>,
    /// Driver supply per original node id; remapped to connectors as needed.
    pub origins: Vec<(NodeId, f64)>,
    /// Price per market, aligned with `augmented.markets`.
    pub prices: Vec<f64>,
    pub driver_coeffs: UtilityCoefficients,
    pub rider_coeffs: RiderCoefficients,
    /// Potential travelers `D_s` per market.
    pub potential_riders: Vec<f64>,
    pub wait: WaitModel,
}

impl JointProblem {
    pub fn validate(&self) -> Result<()> {
        let s = self.augmented.markets.len();
        if s == 0 {
            return Err(config("the augmented network has no markets"));
        }
        if self.prices.len() != s || self.potential_riders.len() != s {
            return Err(config(
                "prices and potential riders need one entry per market",
            ));
        }
        if self.potential_riders.iter().any(|d| !(*d > 0.0)) {
            return Err(config("potential riders must be positive"));
        }
        Ok(())
    }

    pub fn with_prices(&self, prices: &[f64]) -> Self {
        JointProblem {
            prices: prices.to_vec(),
            ..self.clone()
        }
    }

    /// Driver CDA on the augmented network with wait links priced at the
    /// frozen rider flows.
    pub fn driver_problem(&self, rider_flows: &[f64]) -> Result<CdaProblem> {
        let aug = &self.augmented;
        let origins = self
            .origins
            .iter()
            .map(|&(r, q)| (aug.driver_node(r), q))
            .collect();
        let destinations = aug.markets.iter().map(|m| m.market).collect();
        let mut p = CdaProblem::new(
            Arc::new(aug.network.clone()),
            origins,
            destinations,
            self.prices.clone(),
            self.driver_coeffs.clone(),
        )?;
        self.set_wait_costs(&mut p, rider_flows);
        Ok(p)
    }

    fn set_wait_costs(&self, p: &mut CdaProblem, rider_flows: &[f64]) {
        let fit = &self.wait.driver;
        for (m, &f_r) in self.augmented.markets.iter().zip(rider_flows) {
            p.link_costs[m.driver_wait_link] = if fit.a0 == 0.0 {
                LinkCost::Zero
            } else {
                LinkCost::Power {
                    coeff: fit.a0 * f_r.max(FLOW_FLOOR).powf(fit.a2),
                    exponent: fit.a1,
                    floor: FLOW_FLOOR,
                }
            };
        }
    }

    /// Rider flows responding to the given driver flows.
    pub fn rider_response(&self, driver_flows: &[f64]) -> Vec<f64> {
        driver_flows
            .iter()
            .enumerate()
            .map(|(s, &f_d)| {
                rider_equilibrium(
                    f_d,
                    self.prices[s],
                    self.potential_riders[s],
                    &self.rider_coeffs,
                    &self.wait.rider,
                )
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagonalOptions {
    pub cda: CdaOptions,
    /// Largest per-market flow change accepted as a fixed point.
    pub tol: f64,
    pub max_outer: usize,
}

impl Default for DiagonalOptions {
    fn default() -> Self {
        DiagonalOptions {
            cda: CdaOptions::default(),
            tol: 1e-6,
            max_outer: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSolution {
    pub drivers: EquilibriumSolution,
    /// `f_D` per market.
    pub driver_flows: Vec<f64>,
    /// `f_R` per market.
    pub rider_flows: Vec<f64>,
    pub converged: bool,
    pub outer_iterations: usize,
    pub max_change: f64,
}

impl JointSolution {
    /// `f_D - f_R` per market.
    pub fn imbalance(&self) -> Vec<f64> {
        self.driver_flows
            .iter()
            .zip(&self.rider_flows)
            .map(|(d, r)| d - r)
            .collect()
    }
}

/// Diagonalization: freeze rider flows, solve the driver CDA, update riders.
///
/// Not guaranteed to converge; a flagged last iterate is returned when
/// `max_outer` runs out. `warm` seeds the rider flows.
pub fn solve_diagonalized(
    problem: &JointProblem,
    opts: &DiagonalOptions,
    warm: Option<&[f64]>,
) -> Result<JointSolution> {
    problem.validate()?;
    let s_count = problem.augmented.markets.len();
    let mut riders: Vec<f64> = match warm {
        Some(w) if w.len() == s_count => w.to_vec(),
        _ => {
            // start from the even split of drivers
            let share = problem.origins.iter().map(|o| o.1).sum::<f64>() / s_count as f64;
            problem.rider_response(&vec![share; s_count])
        }
    };
    let mut cda = problem.driver_problem(&riders)?;
    let mut damping: f64 = 1.0;
    let mut last_change = f64::INFINITY;
    let mut best: Option<JointSolution> = None;
    for outer in 1..=opts.max_outer {
        problem.set_wait_costs(&mut cda, &riders);
        let drivers = solve_cda(&cda, &opts.cda)?;
        let driver_flows = drivers.supply();
        let response = problem.rider_response(&driver_flows);
        let change = response
            .iter()
            .zip(&riders)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        debug!("diagonalization outer={outer} max_change={change:e}");
        let converged = change <= opts.tol;
        let candidate = JointSolution {
            drivers,
            driver_flows,
            rider_flows: if converged {
                response.clone()
            } else {
                riders.clone()
            },
            converged,
            outer_iterations: outer,
            max_change: change,
        };
        if converged {
            return Ok(candidate);
        }
        if best.as_ref().is_none_or(|b| change < b.max_change) {
            best = Some(candidate);
        }
        if change >= last_change {
            damping = (damping * 0.5).max(1.0 / 64.0);
        }
        last_change = change;
        for (r, n) in riders.iter_mut().zip(&response) {
            *r += damping * (n - *r);
        }
    }
    warn!(
        "diagonalization stopped after {} outer iterations",
        opts.max_outer
    );
    Ok(best.expect("at least one outer iteration"))
}
