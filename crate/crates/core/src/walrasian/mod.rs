//! Balancing prices with matching time through an approximating
//! maxinf-point scheme on augmented Walrasian functions.

mod dfo;

use std::io::Write;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::cda::{solve_diagonalized, CdaOptions, DiagonalOptions, JointProblem, JointSolution};
use crate::error::{config, domain, Result};

pub use dfo::{maximize_over_box, BoxMaximum};

/// Weights on the unit simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimplexPoint {
    pub phi: Vec<f64>,
}

impl SimplexPoint {
    pub fn new(phi: Vec<f64>) -> Result<Self> {
        let sum: f64 = phi.iter().sum();
        if phi.is_empty() || phi.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(domain("simplex weights must be non-negative and sum to 1"));
        }
        Ok(SimplexPoint { phi })
    }

    pub fn uniform(n: usize) -> Self {
        SimplexPoint {
            phi: vec![1.0 / n as f64; n],
        }
    }

    pub fn unit(n: usize, s: usize) -> Self {
        let mut phi = vec![0.0; n];
        phi[s] = 1.0;
        SimplexPoint { phi }
    }
}

/// Squared imbalance per market from a joint equilibrium.
pub fn es_squared(solution: &JointSolution) -> Vec<f64> {
    solution.imbalance().iter().map(|e| e * e).collect()
}

/// `W(rho, phi) = -sum_s phi_s ES_s(rho)`.
pub fn walrasian_w(phi: &SimplexPoint, es: &[f64]) -> f64 {
    -phi.phi.iter().zip(es).map(|(p, e)| p * e).sum::<f64>()
}

/// Euclidean projection onto the unit simplex (sort and threshold).
pub fn project_simplex(y: &[f64]) -> SimplexPoint {
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    let mut phi: Vec<f64> = y.iter().map(|v| (v - theta).max(0.0)).collect();
    // remove rounding drift from the sum
    let sum: f64 = phi.iter().sum();
    if sum > 0.0 {
        phi.iter_mut().for_each(|p| *p /= sum);
    }
    SimplexPoint { phi }
}

/// Value of the augmented Walrasian and its inner minimizer
/// `z* = project(phi + r ES)`.
pub fn augmented_w(phi: &SimplexPoint, r: f64, es: &[f64]) -> Result<(f64, SimplexPoint)> {
    if !(r > 0.0) {
        return Err(domain(format!(
            "proximal parameter must be positive, found {r}"
        )));
    }
    let y: Vec<f64> = phi.phi.iter().zip(es).map(|(p, e)| p + r * e).collect();
    let z = project_simplex(&y);
    let prox: f64 = z
        .phi
        .iter()
        .zip(&phi.phi)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok((walrasian_w(&z, es) + prox / (2.0 * r), z))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalrasSchedule {
    pub eps0: f64,
    pub m0: f64,
    pub r0: f64,
    pub c1: f64,
    pub c2: f64,
    pub gap_tol: f64,
    pub max_outer: usize,
    /// Phase II evaluations per market and outer iteration.
    pub budget_per_market: usize,
}

impl Default for WalrasSchedule {
    fn default() -> Self {
        WalrasSchedule {
            eps0: 1.0,
            m0: 10.0,
            r0: 1.0,
            c1: 0.5,
            c2: 2.0,
            gap_tol: 1e-3,
            max_outer: 30,
            budget_per_market: 50,
        }
    }
}

impl WalrasSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c1 < 1.0 && self.c2 > 1.0) {
            return Err(config("schedule needs 0 < c1 < 1 and c2 > 1"));
        }
        if !(self.eps0 >= 0.0 && self.m0 > 0.0 && self.r0 > 0.0 && self.gap_tol > 0.0) {
            return Err(config(
                "schedule needs eps0 >= 0, M0 > 0, r0 > 0 and gap_tol > 0",
            ));
        }
        Ok(())
    }

    /// `(eps, M, r)` at outer iteration `nu`.
    pub fn at(&self, nu: usize) -> (f64, f64, f64) {
        let k = nu as i32;
        (
            self.eps0 * self.c1.powi(k),
            self.m0 * self.c2.powi(k),
            self.r0 * self.c2.powi(k),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalrasRecord {
    pub nu: usize,
    pub gap: f64,
    pub r: f64,
    pub m: f64,
    pub eps: f64,
    pub rho: Vec<f64>,
    pub phi: Vec<f64>,
    pub es: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WalrasTrace {
    pub records: Vec<WalrasRecord>,
}

impl WalrasTrace {
    /// Writes `nu,gap,r,M,eps,rho_1..rho_S,es_1..es_S`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let s = self.records.first().map_or(0, |r| r.rho.len());
        let mut header: Vec<String> = ["nu", "gap", "r", "M", "eps"]
            .iter()
            .map(|h| h.to_string())
            .collect();
        header.extend((1..=s).map(|i| format!("rho_{i}")));
        header.extend((1..=s).map(|i| format!("es_{i}")));
        w.write_record(&header)?;
        for r in &self.records {
            let mut rec = vec![
                r.nu.to_string(),
                r.gap.to_string(),
                r.r.to_string(),
                r.m.to_string(),
                r.eps.to_string(),
            ];
            rec.extend(r.rho.iter().map(f64::to_string));
            rec.extend(r.es.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Share of all drivers above which an equilibrium counts as trivial.
const TRIVIAL_SHARE: f64 = 0.99;

/// Joint equilibria at trial prices under two accuracy settings.
pub struct JointEvaluator {
    pub problem: JointProblem,
    /// Options for Phase II evaluations.
    pub bounded: DiagonalOptions,
    /// Options for reported ES values.
    pub full: DiagonalOptions,
    pub evaluations: usize,
}

impl JointEvaluator {
    pub fn new(problem: JointProblem) -> Self {
        let full = DiagonalOptions {
            cda: CdaOptions::with_tol(1e-9),
            tol: 1e-7,
            max_outer: 200,
        };
        let bounded = DiagonalOptions {
            cda: CdaOptions {
                max_iter: 2000,
                ..CdaOptions::with_tol(1e-8)
            },
            tol: 1e-6,
            max_outer: 30,
        };
        JointEvaluator {
            problem,
            bounded,
            full,
            evaluations: 0,
        }
    }

    pub fn markets(&self) -> usize {
        self.problem.prices.len()
    }

    /// Joint equilibrium at `rho` with the bounded options, falling back to
    /// a cold full solve when those do not converge.
    pub fn quick(&mut self, rho: &[f64]) -> Result<JointSolution> {
        self.evaluations += 1;
        let p = self.problem.with_prices(rho);
        let mut sol = solve_diagonalized(&p, &self.bounded, None)?;
        if !sol.converged {
            debug!("bounded joint solve did not converge at {rho:?}; retrying with full options");
            sol = solve_diagonalized(&p, &self.full, None)?;
        }
        Ok(sol)
    }

    /// Joint equilibrium at `rho` solved to full tolerance from scratch.
    pub fn full(&mut self, rho: &[f64]) -> Result<JointSolution> {
        self.evaluations += 1;
        let p = self.problem.with_prices(rho);
        solve_diagonalized(&p, &self.full, None)
    }
}

/// Whether one market attracts more than 99% of drivers.
pub fn is_trivial(solution: &JointSolution) -> bool {
    let total: f64 = solution.driver_flows.iter().sum();
    solution.driver_flows.len() >= 2
        && solution
            .driver_flows
            .iter()
            .any(|f| *f > TRIVIAL_SHARE * total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalrasSummary {
    pub rho_star: Vec<f64>,
    pub gap: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalrasResult {
    pub rho_star: Vec<f64>,
    pub gap: f64,
    pub converged: bool,
    pub iterations: usize,
    pub trace: WalrasTrace,
    /// Full-tolerance equilibrium at `rho_star`.
    pub solution: JointSolution,
}

impl WalrasResult {
    pub fn summary(&self) -> WalrasSummary {
        WalrasSummary {
            rho_star: self.rho_star.clone(),
            gap: self.gap,
            converged: self.converged,
            iterations: self.iterations,
        }
    }
}

/// Approximating maxinf-point loop: Phase I updates the simplex weights by
/// the proximal minimizer, Phase II maximizes the augmented Walrasian over a
/// growing box around the previous prices.
pub fn algorithm1(
    evaluator: &mut JointEvaluator,
    schedule: &WalrasSchedule,
    rho0: &[f64],
) -> Result<WalrasResult> {
    schedule.validate()?;
    let s = evaluator.markets();
    if rho0.len() != s {
        return Err(config("one starting price per market is required"));
    }
    let mut rho = rho0.to_vec();
    let mut phi = SimplexPoint::uniform(s);
    let mut solution = evaluator.full(&rho)?;
    let mut es = es_squared(&solution);
    let mut gap = es.iter().copied().fold(0.0, f64::max);
    let (eps, m, r) = schedule.at(0);
    let mut trace = WalrasTrace::default();
    trace.records.push(WalrasRecord {
        nu: 0,
        gap,
        r,
        m,
        eps,
        rho: rho.clone(),
        phi: phi.phi.clone(),
        es: es.clone(),
    });
    let budget = schedule.budget_per_market * s;
    let mut nu = 0;
    while gap >= schedule.gap_tol && nu < schedule.max_outer {
        let (eps, m, r) = schedule.at(nu);
        phi = augmented_w(&phi, r, &es)?.1;
        let weights = phi.clone();
        let best = maximize_over_box(
            |x: &[f64]| {
                let sol = evaluator.quick(x)?;
                if is_trivial(&sol) {
                    return Ok(f64::NEG_INFINITY);
                }
                Ok(augmented_w(&weights, r, &es_squared(&sol))?.0)
            },
            &rho,
            m,
            eps,
            budget,
        )?;
        rho = best.x;
        solution = evaluator.full(&rho)?;
        es = es_squared(&solution);
        gap = es.iter().copied().fold(0.0, f64::max);
        nu += 1;
        let (eps, m, r) = schedule.at(nu);
        debug!(
            "algorithm1 nu={nu} gap={gap:e} rho={rho:?} evals={}",
            best.evaluations
        );
        trace.records.push(WalrasRecord {
            nu,
            gap,
            r,
            m,
            eps,
            rho: rho.clone(),
            phi: phi.phi.clone(),
            es: es.clone(),
        });
    }
    let converged = gap < schedule.gap_tol && solution.converged;
    if converged {
        info!("algorithm1 converged in {nu} outer iterations, gap {gap:e}");
    } else {
        warn!("algorithm1 stopped after {nu} outer iterations with gap {gap:e}");
    }
    Ok(WalrasResult {
        rho_star: rho,
        gap,
        converged,
        iterations: nu,
        trace,
        solution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn walrasian_examples() {
        let u = SimplexPoint::uniform(2);
        assert_eq!(walrasian_w(&u, &[0.0, 0.0]), 0.0);
        assert_eq!(walrasian_w(&u, &[1.0, 3.0]), -2.0);
        assert_eq!(
            walrasian_w(&SimplexPoint::unit(3, 1), &[1.0, 4.0, 2.0]),
            -4.0
        );
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_simplex(&[2.0, 0.0]).phi, vec![1.0, 0.0]);
        let y = [0.2, 0.5, 0.3];
        let p = project_simplex(&y).phi;
        for (a, b) in p.iter().zip(&y) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(SimplexPoint::new(vec![0.5, 0.6]).is_err());
    }

    #[test]
    fn proximal_limits() {
        let phi = SimplexPoint::new(vec![0.3, 0.7]).unwrap();
        let es = [2.0, 1.0];
        let (v, z) = augmented_w(&phi, 1e-9, &es).unwrap();
        assert!((z.phi[0] - 0.3).abs() < 1e-6);
        assert!((v - walrasian_w(&phi, &es)).abs() < 1e-6);
        let (_, z) = augmented_w(&phi, 1e6, &es).unwrap();
        assert_eq!(z.phi, vec![1.0, 0.0]);
        assert!(augmented_w(&phi, 0.0, &es).is_err());
    }

    #[test]
    fn schedule_is_geometric() {
        let s = WalrasSchedule::default();
        let (e, m, r) = s.at(3);
        assert_eq!((e, m, r), (0.125, 80.0, 8.0));
        assert!(WalrasSchedule { c1: 1.0, ..s }.validate().is_err());
        assert!(WalrasSchedule { c2: 1.0, ..s }.validate().is_err());
    }

    proptest! {
        #[test]
        fn projection_kkt(y in proptest::collection::vec(-5.0f64..5.0, 1..8), c in -3.0f64..3.0) {
            let z = project_simplex(&y).phi;
            prop_assert!(z.iter().all(|v| *v >= 0.0));
            prop_assert!((z.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let support: Vec<usize> = (0..z.len()).filter(|&i| z[i] > 0.0).collect();
            let tau = y[support[0]] - z[support[0]];
            for &i in &support {
                prop_assert!((y[i] - z[i] - tau).abs() < 1e-12);
            }
            for i in 0..z.len() {
                if z[i] == 0.0 {
                    prop_assert!(y[i] <= tau + 1e-12);
                }
            }
            let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
            let zs = project_simplex(&shifted).phi;
            for (a, b) in z.iter().zip(&zs) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn augmented_sandwich(es in proptest::collection::vec(0.0f64..10.0, 2..6), r in 0.01f64..10.0) {
            let phi = SimplexPoint::uniform(es.len());
            let (v, z) = augmented_w(&phi, r, &es).unwrap();
            prop_assert!(v >= walrasian_w(&z, &es) - 1e-12);
            prop_assert!(v <= walrasian_w(&phi, &es) + 1e-12);
        }
    }
}
