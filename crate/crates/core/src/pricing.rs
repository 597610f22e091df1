//! Locational prices ignoring matching time: the balancing price vector and
//! the profit-maximizing alternative.

use std::io::Write;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::cda::{solve_cda, CdaOptions, CdaProblem, EquilibriumSolution};
use crate::error::{config, Result};

/// Linear rider demand `d_s = D_s - b_s * rho_s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandModel {
    pub intercept: Vec<f64>,
    pub slope: Vec<f64>,
}

impl DemandModel {
    pub fn new(intercept: Vec<f64>, slope: Vec<f64>) -> Result<Self> {
        if intercept.len() != slope.len() {
            return Err(config("demand intercepts and slopes differ in length"));
        }
        if slope.iter().any(|b| !(*b > 0.0) || !b.is_finite()) {
            return Err(config("demand slopes must be positive"));
        }
        if intercept.iter().any(|d| !d.is_finite()) {
            return Err(config("demand intercepts must be finite"));
        }
        Ok(DemandModel { intercept, slope })
    }

    pub fn uniform(n: usize, intercept: f64, slope: f64) -> Result<Self> {
        Self::new(vec![intercept; n], vec![slope; n])
    }

    pub fn len(&self) -> usize {
        self.slope.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slope.is_empty()
    }

    /// Unclamped demand at every destination.
    pub fn demand(&self, rho: &[f64]) -> Vec<f64> {
        self.intercept
            .iter()
            .zip(&self.slope)
            .zip(rho)
            .map(|((d, b), p)| d - b * p)
            .collect()
    }
}

/// Prices with the box every balancing price vector lies in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceVector {
    pub rho: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl PriceVector {
    pub fn contains(&self, rho: &[f64]) -> bool {
        rho.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(p, (lo, hi))| *p >= *lo && *p <= *hi)
    }

    fn clamp(&self, rho: &mut [f64]) {
        for (p, (lo, hi)) in rho.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *p = p.clamp(*lo, *hi);
        }
    }
}

/// Box `[(D_s - Q)/b_s, D_s/b_s]` for total supply `q_bar`.
pub fn price_bounds(demand: &DemandModel, q_bar: f64) -> (Vec<f64>, Vec<f64>) {
    let lower = demand
        .intercept
        .iter()
        .zip(&demand.slope)
        .map(|(d, b)| (d - q_bar) / b)
        .collect();
    let upper = demand
        .intercept
        .iter()
        .zip(&demand.slope)
        .map(|(d, b)| d / b)
        .collect();
    (lower, upper)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceReport {
    /// Excess supply per destination.
    pub es: Vec<f64>,
    pub m: Vec<f64>,
    pub total_m: f64,
    /// Arriving drivers per destination.
    pub supply: Vec<f64>,
    /// Requested rides per destination.
    pub demand: Vec<f64>,
    /// Whether the underlying CDA solve converged.
    pub converged: bool,
}

impl ImbalanceReport {
    pub fn max_abs(&self) -> f64 {
        self.m.iter().copied().fold(0.0, f64::max)
    }
}

/// Upper-level problem ignoring matching time.
#[derive(Clone, Debug)]
pub struct PricingProblem {
    /// Lower-level template; its prices are overwritten per evaluation.
    pub cda: CdaProblem,
    pub demand: DemandModel,
    pub cda_options: CdaOptions,
}

impl PricingProblem {
    pub fn new(cda: CdaProblem, demand: DemandModel, cda_options: CdaOptions) -> Result<Self> {
        if demand.len() != cda.destinations.len() {
            return Err(config("one demand curve per destination is required"));
        }
        Ok(PricingProblem {
            cda,
            demand,
            cda_options,
        })
    }

    pub fn q_bar(&self) -> f64 {
        self.cda.total_supply()
    }

    pub fn bounds(&self, rho: Vec<f64>) -> PriceVector {
        let (lower, upper) = price_bounds(&self.demand, self.q_bar());
        PriceVector { rho, lower, upper }
    }

    pub fn center(&self) -> Vec<f64> {
        let (lower, upper) = price_bounds(&self.demand, self.q_bar());
        lower
            .iter()
            .zip(&upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    /// Solves the lower level at `rho` and measures the imbalance.
    pub fn evaluate(&self, rho: &[f64]) -> Result<(ImbalanceReport, EquilibriumSolution)> {
        let solution = solve_cda(&self.cda.with_prices(rho)?, &self.cda_options)?;
        let supply = solution.supply();
        let demand = self.demand.demand(rho);
        let es: Vec<f64> = supply.iter().zip(&demand).map(|(q, d)| q - d).collect();
        let m: Vec<f64> = es.iter().map(|e| e.abs()).collect();
        let report = ImbalanceReport {
            total_m: m.iter().sum(),
            es,
            m,
            supply,
            demand,
            converged: solution.converged,
        };
        Ok((report, solution))
    }
}

pub fn excess_supply(problem: &PricingProblem, rho: &[f64]) -> Result<ImbalanceReport> {
    Ok(problem.evaluate(rho)?.0)
}

/// One row of a price-iteration trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub rho: Vec<f64>,
    pub es: Vec<f64>,
    pub total_m: f64,
}

/// Writes `iter,rho_<s>...,es_<s>...,total_m`, labelling destinations by
/// their 1-based node ids.
pub fn write_trace_csv<W: Write>(out: W, labels: &[usize], rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["iter".to_string()];
    header.extend(labels.iter().map(|l| format!("rho_{l}")));
    header.extend(labels.iter().map(|l| format!("es_{l}")));
    header.push("total_m".into());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.iter.to_string()];
        rec.extend(r.rho.iter().map(f64::to_string));
        rec.extend(r.es.iter().map(f64::to_string));
        rec.push(r.total_m.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceSolution {
    pub prices: PriceVector,
    /// `D_s - b_s * rho_s` at the returned prices.
    pub demand: Vec<f64>,
    pub report: ImbalanceReport,
    pub solution: EquilibriumSolution,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
}

fn finish(
    problem: &PricingProblem,
    rho: Vec<f64>,
    report: ImbalanceReport,
    solution: EquilibriumSolution,
    iterations: usize,
    converged: bool,
    trace: Vec<TraceRow>,
) -> PriceSolution {
    PriceSolution {
        demand: problem.demand.demand(&rho),
        prices: problem.bounds(rho),
        converged: converged && report.converged,
        report,
        solution,
        iterations,
        trace,
    }
}

fn row(iter: usize, rho: &[f64], report: &ImbalanceReport) -> TraceRow {
    TraceRow {
        iter,
        rho: rho.to_vec(),
        es: report.es.clone(),
        total_m: report.total_m,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedPointOptions {
    /// Initial step scale in `(0, 1]`.
    pub damping: f64,
    /// Target for `max |ES_s|`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            damping: 1.0,
            tol: 1e-6,
            max_iter: 2000,
        }
    }
}

/// Iterates `rho <- rho - damping * ES(rho) / b`, halving the damping when
/// `max |ES|` has not improved for three iterations.
pub fn fixed_point_prices(
    problem: &PricingProblem,
    opts: &FixedPointOptions,
    start: Option<&[f64]>,
) -> Result<PriceSolution> {
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(config("damping must lie in (0, 1]"));
    }
    let bounds = problem.bounds(Vec::new());
    let mut rho = start.map_or_else(|| problem.center(), <[f64]>::to_vec);
    bounds.clamp(&mut rho);
    let mut damping = opts.damping;
    let (mut report, mut solution) = problem.evaluate(&rho)?;
    let mut trace = vec![row(0, &rho, &report)];
    let mut best = report.max_abs();
    let mut stalled = 0;
    for iter in 1..=opts.max_iter {
        if report.max_abs() <= opts.tol {
            debug!("fixed point converged after {} iterations", iter - 1);
            return Ok(finish(
                problem,
                rho,
                report,
                solution,
                iter - 1,
                true,
                trace,
            ));
        }
        for ((p, e), b) in rho.iter_mut().zip(&report.es).zip(&problem.demand.slope) {
            *p -= damping * e / b;
        }
        bounds.clamp(&mut rho);
        (report, solution) = problem.evaluate(&rho)?;
        trace.push(row(iter, &rho, &report));
        let err = report.max_abs();
        if err < best {
            best = err;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= 3 {
                damping *= 0.5;
                stalled = 0;
                debug!("fixed point damping halved to {damping}");
            }
        }
    }
    let converged = report.max_abs() <= opts.tol;
    if !converged {
        warn!("fixed point stopped at max|ES| = {:e}", report.max_abs());
    }
    Ok(finish(
        problem,
        rho,
        report,
        solution,
        opts.max_iter,
        converged,
        trace,
    ))
}

/// Cyclic per-coordinate bisection of `ES_s(rho) = 0` over the price box.
///
/// Each bracket is grown geometrically from the current price and clipped
/// to the box, so later cycles bisect short intervals.
pub fn bisection_prices(
    problem: &PricingProblem,
    tol: f64,
    max_outer: usize,
) -> Result<PriceSolution> {
    let bounds = problem.bounds(Vec::new());
    let mut rho = problem.center();
    let (mut report, mut solution) = problem.evaluate(&rho)?;
    let mut trace = vec![row(0, &rho, &report)];
    for outer in 1..=max_outer {
        if report.max_abs() <= tol {
            return Ok(finish(
                problem,
                rho,
                report,
                solution,
                outer - 1,
                true,
                trace,
            ));
        }
        for s in 0..rho.len() {
            let e0 = report.es[s];
            if e0.abs() <= 0.25 * tol {
                continue;
            }
            // ES_s increases with rho_s: grow a bracket from the current price
            let (lower, upper) = (bounds.lower[s], bounds.upper[s]);
            let (mut lo, mut hi) = (rho[s], rho[s]);
            let mut cursor = rho[s];
            let mut width = (upper - lower) / 64.0;
            let settled = loop {
                cursor = if e0 > 0.0 {
                    (cursor - width).max(lower)
                } else {
                    (cursor + width).min(upper)
                };
                rho[s] = cursor;
                (report, solution) = problem.evaluate(&rho)?;
                let e = report.es[s];
                if e.abs() <= 0.25 * tol {
                    break true;
                }
                if e0 > 0.0 {
                    if e < 0.0 {
                        lo = cursor;
                        break false;
                    }
                    hi = cursor;
                    if cursor <= lower {
                        break true;
                    }
                } else {
                    if e > 0.0 {
                        hi = cursor;
                        break false;
                    }
                    lo = cursor;
                    if cursor >= upper {
                        break true;
                    }
                }
                width *= 2.0;
            };
            if settled {
                continue;
            }
            while hi - lo > 1e-13 * (1.0 + hi.abs()) {
                rho[s] = 0.5 * (lo + hi);
                (report, solution) = problem.evaluate(&rho)?;
                let e = report.es[s];
                if e.abs() <= 0.25 * tol {
                    break;
                }
                if e > 0.0 {
                    hi = rho[s];
                } else {
                    lo = rho[s];
                }
            }
        }
        trace.push(row(outer, &rho, &report));
    }
    let converged = report.max_abs() <= tol;
    Ok(finish(
        problem, rho, report, solution, max_outer, converged, trace,
    ))
}

/// Price shared by every destination that clears the aggregate market,
/// `sum_s (D_s - b_s rho) = Q`.
pub fn uniform_clearing_price(problem: &PricingProblem) -> f64 {
    let d: f64 = problem.demand.intercept.iter().sum();
    let b: f64 = problem.demand.slope.iter().sum();
    (d - problem.q_bar()) / b
}

/// Shifts all prices by one constant so `sum_s b_s rho_s = sum_s D_s - Q`.
/// Logit choices depend only on price differences, so supply is unchanged.
fn clear_aggregate(problem: &PricingProblem, rho: &mut [f64]) {
    let d: f64 = problem.demand.intercept.iter().sum();
    let b: f64 = problem.demand.slope.iter().sum();
    let now: f64 = problem
        .demand
        .slope
        .iter()
        .zip(rho.iter())
        .map(|(b, p)| b * p)
        .sum();
    let c = (d - problem.q_bar() - now) / b;
    for p in rho.iter_mut() {
        *p += c;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SingleLevelOptions {
    /// Target for the clearing residual `max |ES_s|`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SingleLevelOptions {
    fn default() -> Self {
        SingleLevelOptions {
            tol: 1e-6,
            max_iter: 1000,
        }
    }
}

/// Dual decomposition of the single-level convex program: the multipliers
/// of the clearing constraints are the prices, the flow subproblem is the
/// CDA and demand follows in closed form.
pub fn solve_single_level(
    problem: &PricingProblem,
    opts: &SingleLevelOptions,
) -> Result<PriceSolution> {
    let mut rho = vec![uniform_clearing_price(problem); problem.demand.len()];
    let (mut report, mut solution) = problem.evaluate(&rho)?;
    let merit = |r: &ImbalanceReport| -> f64 {
        r.es.iter()
            .zip(&problem.demand.slope)
            .map(|(e, b)| e * e / b)
            .sum()
    };
    let mut current = merit(&report);
    let mut trace = vec![row(0, &rho, &report)];
    let mut step = 1.0;
    for iter in 1..=opts.max_iter {
        if report.max_abs() <= opts.tol {
            info!("single-level solve converged after {} iterations", iter - 1);
            return Ok(finish(
                problem,
                rho,
                report,
                solution,
                iter - 1,
                true,
                trace,
            ));
        }
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial: Vec<f64> = rho
                .iter()
                .zip(&report.es)
                .zip(&problem.demand.slope)
                .map(|((p, e), b)| p - step * e / b)
                .collect();
            clear_aggregate(problem, &mut trial);
            let (r, s) = problem.evaluate(&trial)?;
            let m = merit(&r);
            if m < current {
                rho = trial;
                report = r;
                solution = s;
                current = m;
                accepted = true;
                step = (step * 2.0).min(1.0);
                break;
            }
            step *= 0.5;
        }
        trace.push(row(iter, &rho, &report));
        debug!(
            "single-level iter={iter} max|ES|={:e} step={step}",
            report.max_abs()
        );
        if !accepted {
            warn!(
                "single-level line search failed at max|ES| = {:e}",
                report.max_abs()
            );
            return Ok(finish(problem, rho, report, solution, iter, false, trace));
        }
    }
    let converged = report.max_abs() <= opts.tol;
    Ok(finish(
        problem,
        rho,
        report,
        solution,
        opts.max_iter,
        converged,
        trace,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfitReport {
    pub revenue: f64,
    /// Matches `n_s = min(supply, max(0, demand))`.
    pub matches: Vec<f64>,
    pub converged: bool,
}

pub fn profit(problem: &PricingProblem, rho: &[f64]) -> Result<ProfitReport> {
    let (report, _) = problem.evaluate(rho)?;
    let matches: Vec<f64> = report
        .supply
        .iter()
        .zip(&report.demand)
        .map(|(q, d)| q.min(d.max(0.0)))
        .collect();
    Ok(ProfitReport {
        revenue: rho.iter().zip(&matches).map(|(p, n)| p * n).sum(),
        matches,
        converged: report.converged,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfitSolution {
    pub prices: PriceVector,
    pub revenue: f64,
    pub matches: Vec<f64>,
    pub evaluations: usize,
    /// No coordinate move of the final step size improves revenue.
    pub stationary: bool,
}

/// Coordinate pattern search for revenue over `[lower, upper]`.
///
/// Starts at the box center with step width/8, halves the step after a full
/// sweep without improvement and stops once the step drops below `tol`.
pub fn maximize_profit(
    problem: &PricingProblem,
    lower: &[f64],
    upper: &[f64],
    tol: f64,
    max_evals: usize,
) -> Result<ProfitSolution> {
    let n = lower.len();
    if upper.len() != n
        || n != problem.demand.len()
        || lower.iter().zip(upper).any(|(l, u)| !(l < u))
    {
        return Err(config("profit search needs a bounded box per destination"));
    }
    let mut x: Vec<f64> = lower
        .iter()
        .zip(upper)
        .map(|(l, u)| 0.5 * (l + u))
        .collect();
    let mut best = profit(problem, &x)?;
    let mut evals = 1;
    let mut step: Vec<f64> = lower
        .iter()
        .zip(upper)
        .map(|(l, u)| (u - l) / 8.0)
        .collect();
    let mut stationary = false;
    let mut certifying = false;
    while evals < max_evals {
        let mut improved = false;
        for s in 0..n {
            for dir in [1.0, -1.0] {
                let mut y = x.clone();
                y[s] = (x[s] + dir * step[s]).clamp(lower[s], upper[s]);
                if y[s] == x[s] {
                    continue;
                }
                let p = profit(problem, &y)?;
                evals += 1;
                if p.revenue > best.revenue {
                    x = y;
                    best = p;
                    improved = true;
                    break;
                }
            }
        }
        if improved {
            continue;
        }
        if certifying {
            stationary = true;
            break;
        }
        for h in step.iter_mut() {
            *h *= 0.5;
        }
        if step.iter().all(|h| *h < tol) {
            // final sweep at step tol certifies stationarity
            step.iter_mut().for_each(|h| *h = tol);
            certifying = true;
        }
    }
    if !stationary {
        warn!("profit search used its budget of {max_evals} evaluations");
    }
    Ok(ProfitSolution {
        prices: PriceVector {
            rho: x,
            lower: lower.to_vec(),
            upper: upper.to_vec(),
        },
        revenue: best.revenue,
        matches: best.matches,
        evaluations: evals,
        stationary,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::cda::UtilityCoefficients;
    use crate::fixtures::three_node_pricing;
    use crate::network::{Link, Network};

    fn symmetric(supply: f64, destinations: usize, intercept: f64) -> PricingProblem {
        let mut links = Vec::new();
        for s in 1..=destinations {
            links.push(Link::bpr(links.len(), 0, s, 10.0, 40.0, 4));
            links.push(Link::bpr(links.len(), s, 0, 10.0, 40.0, 4));
        }
        let net = Network::new(destinations + 1, links).unwrap();
        let cda = CdaProblem::new(
            Arc::new(net),
            vec![(0, supply)],
            (1..=destinations).collect(),
            vec![0.0; destinations],
            UtilityCoefficients::uniform(destinations, 0.0, 1.0, 0.6).unwrap(),
        )
        .unwrap();
        let demand = DemandModel::uniform(destinations, intercept, 5.0).unwrap();
        PricingProblem::new(cda, demand, CdaOptions::with_tol(1e-9)).unwrap()
    }

    #[test]
    fn demand_validation() {
        assert!(DemandModel::new(vec![1.0], vec![0.0]).is_err());
        assert!(DemandModel::new(vec![1.0, 2.0], vec![1.0]).is_err());
        let d = DemandModel::uniform(2, 300.0, 5.0).unwrap();
        assert_eq!(d.demand(&[10.0, 60.0]), vec![250.0, 0.0]);
    }

    #[test]
    fn bounds_box() {
        let d = DemandModel::new(vec![300.0, 200.0], vec![5.0, 4.0]).unwrap();
        let (lo, hi) = price_bounds(&d, 100.0);
        assert_eq!(lo, vec![40.0, 25.0]);
        assert_eq!(hi, vec![60.0, 50.0]);
    }

    #[test]
    fn upper_bound_prices_leave_all_supply_unserved() {
        let p = symmetric(100.0, 2, 300.0);
        let r = excess_supply(&p, &[60.0, 60.0]).unwrap();
        assert!((r.es.iter().sum::<f64>() - 100.0).abs() < 1e-9);
        assert!((r.es[0] - r.es[1]).abs() < 1e-6);
    }

    #[test]
    fn excess_supply_sums_to_aggregate_gap() {
        let p = three_node_pricing(CdaOptions::with_tol(1e-9)).unwrap();
        let rho = [48.0, 61.0];
        let r = excess_supply(&p, &rho).unwrap();
        let requested: f64 = p.demand.demand(&rho).iter().sum();
        assert!((r.es.iter().sum::<f64>() - (50.0 - requested)).abs() < 1e-9);
        assert!((r.total_m - r.m.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn symmetric_fixed_point_is_fifty() {
        let p = symmetric(100.0, 2, 300.0);
        let sol = fixed_point_prices(&p, &FixedPointOptions::default(), None).unwrap();
        assert!(sol.converged);
        for r in &sol.prices.rho {
            assert!((r - 50.0).abs() < 1e-6);
        }
    }

    #[test]
    fn fixed_point_restart_at_solution() {
        let p = three_node_pricing(CdaOptions::with_tol(1e-9)).unwrap();
        let first = fixed_point_prices(&p, &FixedPointOptions::default(), None).unwrap();
        let again =
            fixed_point_prices(&p, &FixedPointOptions::default(), Some(&first.prices.rho)).unwrap();
        assert!(again.iterations <= 1);
    }

    #[test]
    fn damping_out_of_range_rejected() {
        let p = symmetric(100.0, 2, 300.0);
        let opts = FixedPointOptions {
            damping: 1.5,
            ..Default::default()
        };
        assert!(fixed_point_prices(&p, &opts, None).is_err());
    }

    #[test]
    fn single_destination_bisection() {
        let p = symmetric(100.0, 1, 300.0);
        let sol = bisection_prices(&p, 1e-6, 5).unwrap();
        assert!(sol.converged);
        assert!((sol.prices.rho[0] - 40.0).abs() < 1e-6);
        assert!(sol.iterations <= 1);
    }

    #[test]
    fn solvers_agree_on_three_node() {
        let p = three_node_pricing(CdaOptions::with_tol(1e-9)).unwrap();
        let fp = fixed_point_prices(&p, &FixedPointOptions::default(), None).unwrap();
        let bi = bisection_prices(&p, 1e-6, 200).unwrap();
        let sl = solve_single_level(&p, &SingleLevelOptions::default()).unwrap();
        for ((a, b), c) in fp.prices.rho.iter().zip(&bi.prices.rho).zip(&sl.prices.rho) {
            assert!((a - b).abs() < 1e-3 && (a - c).abs() < 1e-3);
        }
        assert!((sl.prices.rho[0] + sl.prices.rho[1] - 110.0).abs() < 1e-2);
        assert!(sl.prices.rho[1] > sl.prices.rho[0]);
        assert_eq!(sl.demand, p.demand.demand(&sl.prices.rho));
    }

    #[test]
    fn uniform_price_clears_aggregate() {
        let p = three_node_pricing(CdaOptions::default()).unwrap();
        assert!((uniform_clearing_price(&p) - 55.0).abs() < 1e-12);
    }

    #[test]
    fn profit_with_no_demand_is_zero() {
        let p = symmetric(100.0, 2, 0.0);
        let r = profit(&p, &[1.0, 2.0]).unwrap();
        assert_eq!(r.revenue, 0.0);
    }

    #[test]
    fn monopoly_price_with_ample_supply() {
        let p = symmetric(1000.0, 1, 300.0);
        let sol = maximize_profit(&p, &[0.0], &[60.0], 1e-3, 500).unwrap();
        assert!(sol.stationary);
        assert!((sol.prices.rho[0] - 30.0).abs() < 0.5);
    }

    #[test]
    fn profit_search_rejects_empty_box() {
        let p = symmetric(100.0, 1, 300.0);
        assert!(maximize_profit(&p, &[5.0], &[5.0], 1e-3, 10).is_err());
    }

    #[test]
    fn trace_csv_header() {
        let rows = vec![TraceRow {
            iter: 0,
            rho: vec![1.0, 2.0],
            es: vec![0.5, -0.5],
            total_m: 1.0,
        }];
        let mut out = Vec::new();
        write_trace_csv(&mut out, &[2, 3], &rows).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("iter,rho_2,rho_3,es_2,es_3,total_m\n0,1,2,0.5,-0.5,1"));
    }
}
