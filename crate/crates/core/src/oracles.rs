//! Brute-force ground truth for small instances. Nothing here calls the
//! production assignment or pricing code paths except the lower-level
//! solve inside the grid search.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cda::solve_cda;
use crate::error::{domain, Error, Result};
use crate::network::{CostKind, Link, LinkId, Network, OdPair};
use crate::pricing::PricingProblem;

const MAX_ENUMERABLE_NODES: usize = 8;
const MAX_GRID_DESTINATIONS: usize = 3;

/// All simple paths of one OD pair, as link sequences.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathSet {
    pub od: OdPair,
    pub paths: Vec<Vec<LinkId>>,
}

pub fn enumerate_paths(network: &Network, od: OdPair) -> Result<PathSet> {
    if network.node_count() > MAX_ENUMERABLE_NODES {
        return Err(Error::Refused(format!(
            "path enumeration is limited to {MAX_ENUMERABLE_NODES} nodes, network has {}",
            network.node_count()
        )));
    }
    let mut paths = Vec::new();
    if od.origin != od.destination {
        let mut on_path = vec![false; network.node_count()];
        let mut stack = Vec::new();
        on_path[od.origin] = true;
        dfs(
            network,
            od.origin,
            od.destination,
            &mut on_path,
            &mut stack,
            &mut paths,
        );
    }
    Ok(PathSet { od, paths })
}

fn dfs(
    net: &Network,
    node: usize,
    dest: usize,
    on_path: &mut [bool],
    stack: &mut Vec<LinkId>,
    out: &mut Vec<Vec<LinkId>>,
) {
    for a in 0..net.link_count() {
        let l = net.link(a);
        if l.tail != node || on_path[l.head] {
            continue;
        }
        stack.push(a);
        if l.head == dest {
            out.push(stack.clone());
        } else {
            on_path[l.head] = true;
            dfs(net, l.head, dest, on_path, stack, out);
            on_path[l.head] = false;
        }
        stack.pop();
    }
}

fn link_time(l: &Link, v: f64) -> f64 {
    match l.cost_kind {
        CostKind::Bpr => l.t0 + l.t0 * l.bpr_coeff * (v / l.capacity).powf(l.bpr_power as f64),
        _ => 0.0,
    }
}

fn link_area(l: &Link, v: f64) -> f64 {
    match l.cost_kind {
        CostKind::Bpr => {
            let p = l.bpr_power as f64;
            l.t0 * v + l.t0 * l.bpr_coeff * l.capacity * (v / l.capacity).powf(p + 1.0) / (p + 1.0)
        }
        _ => 0.0,
    }
}

/// Projection onto `{h >= 0, sum h = total}` by bisection on the shift.
fn project_scaled(y: &[f64], total: f64) -> Vec<f64> {
    let mass = |tau: f64| y.iter().map(|v| (v - tau).max(0.0)).sum::<f64>();
    let hi0 = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (hi0 - total - 1.0, hi0);
    while mass(lo) < total {
        lo -= (hi - lo).max(1.0);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    let mut h: Vec<f64> = y.iter().map(|v| (v - tau).max(0.0)).collect();
    let s: f64 = h.iter().sum();
    if s > 0.0 {
        h.iter_mut().for_each(|x| *x *= total / s);
    }
    h
}

/// Link flows of the fixed-demand user equilibrium, by projected gradient
/// on path flows until the relative gap is at most `tol`.
pub fn path_ue_oracle(network: &Network, demands: &[(OdPair, f64)], tol: f64) -> Result<Vec<f64>> {
    let sets: Vec<PathSet> = demands
        .iter()
        .map(|(od, _)| enumerate_paths(network, *od))
        .collect::<Result<_>>()?;
    for (set, (od, d)) in sets.iter().zip(demands) {
        if set.paths.is_empty() && od.origin != od.destination && *d > 0.0 {
            return Err(domain("OD pair with demand has no path"));
        }
    }
    let links = network.links();
    let mut h: Vec<Vec<f64>> = sets
        .iter()
        .zip(demands)
        .map(|(s, (_, d))| vec![d / s.paths.len().max(1) as f64; s.paths.len()])
        .collect();
    let load = |h: &[Vec<f64>]| {
        let mut v = vec![0.0; links.len()];
        for (set, hs) in sets.iter().zip(h) {
            for (p, f) in set.paths.iter().zip(hs) {
                for &a in p {
                    v[a] += f;
                }
            }
        }
        v
    };
    let beckmann = |v: &[f64]| {
        links
            .iter()
            .zip(v)
            .map(|(l, x)| link_area(l, *x))
            .sum::<f64>()
    };
    let mut v = load(&h);
    let mut obj = beckmann(&v);
    let mut alpha = 1.0;
    for _ in 0..200_000 {
        let t: Vec<f64> = links
            .iter()
            .zip(&v)
            .map(|(l, x)| link_time(l, *x))
            .collect();
        let costs: Vec<Vec<f64>> = sets
            .iter()
            .map(|s| {
                s.paths
                    .iter()
                    .map(|p| p.iter().map(|&a| t[a]).sum())
                    .collect()
            })
            .collect();
        let (mut num, mut den) = (0.0, 0.0);
        for ((hs, cs), (_, d)) in h.iter().zip(&costs).zip(demands) {
            if cs.is_empty() {
                continue;
            }
            let cmin = cs.iter().copied().fold(f64::INFINITY, f64::min);
            num += hs.iter().zip(cs).map(|(f, c)| f * (c - cmin)).sum::<f64>();
            den += d * cmin;
        }
        if den <= 0.0 || num / den <= tol {
            return Ok(v);
        }
        loop {
            let trial: Vec<Vec<f64>> = h
                .iter()
                .zip(&costs)
                .zip(demands)
                .map(|((hs, cs), (_, d))| {
                    if hs.is_empty() {
                        return Vec::new();
                    }
                    let y: Vec<f64> = hs.iter().zip(cs).map(|(f, c)| f - alpha * c).collect();
                    project_scaled(&y, *d)
                })
                .collect();
            let tv = load(&trial);
            let tobj = beckmann(&tv);
            if tobj <= obj || alpha < 1e-12 {
                h = trial;
                v = tv;
                obj = tobj;
                alpha *= 1.5;
                break;
            }
            alpha *= 0.5;
        }
    }
    Ok(v)
}

/// Best grid points by total imbalance and by revenue.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridOptimum {
    pub balance_rho: Vec<f64>,
    pub balance_total_m: f64,
    pub revenue_rho: Vec<f64>,
    pub revenue: f64,
    /// Grid spacing per axis.
    pub cell: Vec<f64>,
}

/// Exhaustive evaluation of a `points`-per-axis grid over the price box
/// (the supply-derived box unless `bounds` is given).
pub fn grid_price_oracle(
    problem: &PricingProblem,
    points: usize,
    bounds: Option<(&[f64], &[f64])>,
) -> Result<GridOptimum> {
    let s = problem.demand.intercept.len();
    if s > MAX_GRID_DESTINATIONS {
        return Err(Error::Refused(format!(
            "grid search is limited to {MAX_GRID_DESTINATIONS} destinations, problem has {s}"
        )));
    }
    if points < 2 {
        return Err(domain("grid needs at least two points per axis"));
    }
    let q_bar: f64 = problem.cda.origins.iter().map(|o| o.1).sum();
    let (lower, upper): (Vec<f64>, Vec<f64>) = match bounds {
        Some((l, u)) => (l.to_vec(), u.to_vec()),
        None => (0..s)
            .map(|i| {
                let (d, b) = (problem.demand.intercept[i], problem.demand.slope[i]);
                ((d - q_bar) / b, d / b)
            })
            .unzip(),
    };
    let cell: Vec<f64> = lower
        .iter()
        .zip(&upper)
        .map(|(l, u)| (u - l) / (points - 1) as f64)
        .collect();
    let total = points.pow(s as u32);
    let values: Vec<(Vec<f64>, f64, f64)> = (0..total)
        .into_par_iter()
        .map(|k| {
            // first axis varies slowest so index order is lexicographic
            let mut rho = vec![0.0; s];
            let mut rem = k;
            for i in (0..s).rev() {
                rho[i] = lower[i] + (rem % points) as f64 * cell[i];
                rem /= points;
            }
            let sol = solve_cda(&problem.cda.with_prices(&rho)?, &problem.cda_options)?;
            let mut total_m = 0.0;
            let mut revenue = 0.0;
            for i in 0..s {
                let supply: f64 = sol.q.iter().map(|row| row[i]).sum();
                let demand = problem.demand.intercept[i] - problem.demand.slope[i] * rho[i];
                total_m += (supply - demand).abs();
                revenue += rho[i] * supply.min(demand.max(0.0));
            }
            Ok((rho, total_m, revenue))
        })
        .collect::<Result<_>>()?;
    let mut bal = 0;
    let mut rev = 0;
    for (k, v) in values.iter().enumerate() {
        if v.1 < values[bal].1 {
            bal = k;
        }
        if v.2 > values[rev].2 {
            rev = k;
        }
    }
    Ok(GridOptimum {
        balance_rho: values[bal].0.clone(),
        balance_total_m: values[bal].1,
        revenue_rho: values[rev].0.clone(),
        revenue: values[rev].2,
        cell,
    })
}

/// Minimizes `-z.es + |z - phi|^2 / (2r)` over the simplex by enumerating
/// every support set and solving its equality-constrained stationarity
/// conditions.
pub fn simplex_qp_bruteforce(phi: &[f64], r: f64, es: &[f64]) -> (f64, Vec<f64>) {
    let n = phi.len();
    let objective = |z: &[f64]| {
        let lin: f64 = z.iter().zip(es).map(|(a, b)| a * b).sum();
        let prox: f64 = z.iter().zip(phi).map(|(a, b)| (a - b).powi(2)).sum();
        -lin + prox / (2.0 * r)
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        // z_i = phi_i + r es_i - r mu on the support
        let free: f64 = support.iter().map(|&i| phi[i] + r * es[i]).sum();
        let mu = (free - 1.0) / (r * support.len() as f64);
        let mut z = vec![0.0; n];
        let mut feasible = true;
        for &i in &support {
            z[i] = phi[i] + r * es[i] - r * mu;
            if z[i] < -1e-14 {
                feasible = false;
            }
        }
        if !feasible {
            continue;
        }
        let val = objective(&z);
        if best.as_ref().is_none_or(|(b, _)| val < *b) {
            best = Some((val, z));
        }
    }
    best.expect("the full support or a vertex is always feasible")
}
