//! Evans' partial linearization for the CDA program.
//!
//! Each iteration linearizes only the link-cost term: the auxiliary point
//! distributes drivers by logit on current shortest travel times and loads
//! them all-or-nothing, then an exact line search picks the step. Steps
//! follow conjugate combinations of successive auxiliary points.

use log::{debug, trace};

use super::{logit_into, CdaProblem, EquilibriumSolution};
use crate::error::Result;
use crate::network::dijkstra;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CdaOptions {
    /// Relative gap at which the solver stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Width of the final bracket of the line search.
    pub line_search_tol: f64,
    /// Largest relative deviation of `q` from the logit split at the current
    /// travel times accepted at convergence.
    pub logit_tol: f64,
}

impl Default for CdaOptions {
    fn default() -> Self {
        CdaOptions {
            tol: 1e-6,
            max_iter: 10_000,
            line_search_tol: 1e-10,
            logit_tol: 1e-5,
        }
    }
}

impl CdaOptions {
    pub fn with_tol(tol: f64) -> Self {
        CdaOptions {
            tol,
            ..Self::default()
        }
    }
}

/// Relocation flows below this share of their origin's supply are ignored
/// by the logit consistency test.
const LOGIT_FLOOR: f64 = 1e-12;

/// Keeps conjugate weights away from 1 so new auxiliary points always enter.
const CONJUGATE_MARGIN: f64 = 1e-4;

/// Flat iterate: `q` is origin-major `R x S`, per-OD link flows are
/// `(R*S) x L`, background flows `B x L`.
#[derive(Clone)]
struct Iterate {
    q: Vec<f64>,
    od: Vec<f64>,
    bg: Vec<f64>,
    v: Vec<f64>,
}

struct Auxiliary {
    point: Iterate,
    t_od: Vec<f64>,
    times: Vec<f64>,
}

struct Solver<'a> {
    p: &'a CdaProblem,
    r_count: usize,
    s_count: usize,
    l_count: usize,
    bg_ods: Vec<(usize, usize, f64)>,
}

impl<'a> Solver<'a> {
    fn new(p: &'a CdaProblem) -> Self {
        let mut bg_ods = Vec::new();
        for b in &p.background {
            for &(k, d) in &b.shares {
                bg_ods.push((b.origin, k, d * b.total));
            }
        }
        Solver {
            p,
            r_count: p.origins.len(),
            s_count: p.destinations.len(),
            l_count: p.network.link_count(),
            bg_ods,
        }
    }

    fn entropy(&self, q: &[f64]) -> f64 {
        q.iter()
            .enumerate()
            .map(|(i, &x)| self.p.entropy_term(i % self.s_count, x))
            .sum()
    }

    fn objective(&self, x: &Iterate) -> f64 {
        let beckmann: f64 = self
            .p
            .link_costs
            .iter()
            .zip(&x.v)
            .map(|(c, &f)| c.integral(f))
            .sum();
        beckmann + self.entropy(&x.q)
    }

    /// Minimizer of the partially linearized objective at link flows `v`.
    fn auxiliary(&self, v: &[f64]) -> Auxiliary {
        let p = self.p;
        let net = &*p.network;
        let (s_count, l_count) = (self.s_count, self.l_count);
        let times: Vec<f64> = p
            .link_costs
            .iter()
            .zip(v)
            .map(|(c, &f)| c.time(f))
            .collect();
        let mut point = Iterate {
            q: vec![0.0; self.r_count * s_count],
            od: vec![0.0; self.r_count * s_count * l_count],
            bg: vec![0.0; self.bg_ods.len() * l_count],
            v: vec![0.0; l_count],
        };
        let mut t_od = vec![0.0; self.r_count * s_count];
        let mut utils = vec![0.0; s_count];
        for (r, &(origin, supply)) in p.origins.iter().enumerate() {
            let sp = dijkstra(net, &times, origin);
            for (s, &dest) in p.destinations.iter().enumerate() {
                // reachability is validated when the problem is built
                let t = sp.labels[dest].unwrap_or(f64::INFINITY);
                t_od[r * s_count + s] = t;
                utils[s] = p.coeffs.utility(s, t, p.prices[s]);
            }
            let q_row = &mut point.q[r * s_count..(r + 1) * s_count];
            logit_into(&utils, supply, q_row);
            for (s, &dest) in p.destinations.iter().enumerate() {
                let flow = point.q[r * s_count + s];
                let base = (r * s_count + s) * l_count;
                let mut n = dest;
                while let Some(a) = sp.predecessors[n] {
                    point.od[base + a] += flow;
                    point.v[a] += flow;
                    n = net.link(a).tail;
                }
            }
        }
        for (b, &(origin, dest, flow)) in self.bg_ods.iter().enumerate() {
            let sp = dijkstra(net, &times, origin);
            let mut n = dest;
            while let Some(a) = sp.predecessors[n] {
                point.bg[b * l_count + a] += flow;
                point.v[a] += flow;
                n = net.link(a).tail;
            }
        }
        Auxiliary { point, t_od, times }
    }

    /// Largest relative deviation of `q` from the logit target `target`.
    fn logit_deviation(&self, q: &[f64], target: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (r, &(_, supply)) in self.p.origins.iter().enumerate() {
            let row = r * self.s_count..(r + 1) * self.s_count;
            for (x, t) in q[row.clone()].iter().zip(&target[row]) {
                if *t > LOGIT_FLOOR * supply {
                    worst = worst.max((x - t).abs() / t);
                }
            }
        }
        worst
    }

    /// Derivative of the objective along `x + lambda * d` (`d = y - x`).
    fn directional_derivative(&self, x: &Iterate, y: &Iterate, lambda: f64) -> f64 {
        let p = self.p;
        let mut g = 0.0;
        for ((c, &xv), &yv) in p.link_costs.iter().zip(&x.v).zip(&y.v) {
            let d = yv - xv;
            if d != 0.0 {
                g += c.time(xv + lambda * d) * d;
            }
        }
        let coeffs = &p.coeffs;
        for (i, (&xq, &yq)) in x.q.iter().zip(&y.q).enumerate() {
            let d = yq - xq;
            if d != 0.0 {
                let s = i % self.s_count;
                let ql = xq + lambda * d;
                let marginal =
                    (ql.ln() - coeffs.beta2 * p.prices[s] - coeffs.beta0[s]) / coeffs.beta1;
                g += marginal * d;
            }
        }
        g
    }

    /// `(a - x)' H (b - c)` with `H` the diagonal Hessian of the objective
    /// at `x`.
    fn curvature(&self, x: &Iterate, a: &Iterate, b: &Iterate, c: &Iterate) -> f64 {
        let mut h = 0.0;
        for (i, cost) in self.p.link_costs.iter().enumerate() {
            let da = a.v[i] - x.v[i];
            if da != 0.0 {
                h += cost.slope(x.v[i]) * da * (b.v[i] - c.v[i]);
            }
        }
        let beta1 = self.p.coeffs.beta1;
        for (i, &xq) in x.q.iter().enumerate() {
            let da = a.q[i] - xq;
            if da != 0.0 && xq > 0.0 {
                h += da * (b.q[i] - c.q[i]) / (beta1 * xq);
            }
        }
        h
    }

    /// Conjugate Frank-Wolfe direction point: a convex combination of the
    /// previous direction point and the new auxiliary point, conjugate to
    /// the previous direction.
    fn conjugate(&self, x: &Iterate, y: &Iterate, prev: Option<&Iterate>) -> Option<Iterate> {
        let prev = prev?;
        let num = self.curvature(x, prev, y, x);
        let den = self.curvature(x, prev, y, prev);
        if den == 0.0 || !(num / den).is_finite() {
            return None;
        }
        let alpha = (num / den).clamp(0.0, 1.0 - CONJUGATE_MARGIN);
        if alpha == 0.0 {
            return None;
        }
        let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter()
                .zip(b)
                .map(|(p, n)| alpha * p + (1.0 - alpha) * n)
                .collect()
        };
        let s = Iterate {
            q: mix(&prev.q, &y.q),
            od: mix(&prev.od, &y.od),
            bg: mix(&prev.bg, &y.bg),
            v: mix(&prev.v, &y.v),
        };
        (self.directional_derivative(x, &s, 0.0) < 0.0).then_some(s)
    }

    fn line_search(&self, x: &Iterate, y: &Iterate, width: f64) -> f64 {
        if self.directional_derivative(x, y, 1.0) <= 0.0 {
            return 1.0;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        while hi - lo > width {
            let mid = 0.5 * (lo + hi);
            if self.directional_derivative(x, y, mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    fn to_solution(
        &self,
        x: Iterate,
        t_od: Vec<f64>,
        objective: f64,
        rel_gap: f64,
        iterations: usize,
        converged: bool,
        trace: Vec<f64>,
    ) -> EquilibriumSolution {
        let (s_count, l_count) = (self.s_count, self.l_count);
        EquilibriumSolution {
            q: x.q.chunks(s_count).map(<[f64]>::to_vec).collect(),
            od_link_flows: x.od.chunks(l_count.max(1)).map(<[f64]>::to_vec).collect(),
            background_link_flows: x.bg.chunks(l_count.max(1)).map(<[f64]>::to_vec).collect(),
            v: x.v,
            t_od: t_od.chunks(s_count).map(<[f64]>::to_vec).collect(),
            objective,
            rel_gap,
            iterations,
            converged,
            objective_trace: trace,
        }
    }
}

/// Solves the CDA program at the problem's prices.
///
/// Returns the last iterate with `converged == false` when `max_iter` is
/// reached first; callers decide whether to accept it.
pub fn solve_cda(problem: &CdaProblem, opts: &CdaOptions) -> Result<EquilibriumSolution> {
    let solver = Solver::new(problem);
    let zero = vec![0.0; solver.l_count];
    let mut x = solver.auxiliary(&zero).point;
    let mut obj = solver.objective(&x);
    let mut trace = vec![obj];
    let mut rel_gap = f64::INFINITY;
    let mut prev: Option<Iterate> = None;
    for iter in 0..=opts.max_iter {
        let aux = solver.auxiliary(&x.v);
        let y = &aux.point;
        // Lower bound from the partial linearization at x.
        let linear: f64 = aux
            .times
            .iter()
            .zip(y.v.iter().zip(&x.v))
            .map(|(t, (yv, xv))| t * (yv - xv))
            .sum();
        let lower = obj + linear + solver.entropy(&y.q) - solver.entropy(&x.q);
        rel_gap = ((obj - lower) / lower.abs().max(f64::MIN_POSITIVE)).max(0.0);
        trace!("iter={iter} rel_gap={rel_gap:e} obj={obj}");
        if rel_gap <= opts.tol && solver.logit_deviation(&x.q, &y.q) <= opts.logit_tol {
            debug!("CDA converged: iter={iter} rel_gap={rel_gap:e} obj={obj}");
            return Ok(solver.to_solution(x, aux.t_od, obj, rel_gap, iter, true, trace));
        }
        if iter == opts.max_iter {
            debug!("CDA hit max_iter={iter} rel_gap={rel_gap:e}");
            return Ok(solver.to_solution(x, aux.t_od, obj, rel_gap, iter, false, trace));
        }
        let target = solver
            .conjugate(&x, y, prev.as_ref())
            .unwrap_or_else(|| y.clone());
        let y = &target;
        let lambda = solver.line_search(&x, y, opts.line_search_tol);
        let step = |a: &mut Vec<f64>, b: &Vec<f64>| {
            for (ai, bi) in a.iter_mut().zip(b) {
                *ai += lambda * (bi - *ai);
            }
        };
        step(&mut x.q, &y.q);
        step(&mut x.od, &y.od);
        step(&mut x.bg, &y.bg);
        step(&mut x.v, &y.v);
        obj = solver.objective(&x);
        trace.push(obj);
        prev = Some(target);
    }
    unreachable!("loop returns on its last iteration; gap {rel_gap}")
}
