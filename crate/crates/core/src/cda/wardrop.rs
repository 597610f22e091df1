use serde::{Deserialize, Serialize};

use super::{CdaProblem, EquilibriumSolution};
use crate::network::{dijkstra, Network, NodeId};

/// Share of an OD flow below which a link counts as unused.
const USED_SHARE: f64 = 1e-4;

/// Networks up to this many nodes are checked by explicit path decomposition.
const DECOMPOSITION_NODES: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdExcess {
    /// `(origin, destination)` node ids.
    pub od: (NodeId, NodeId),
    pub flow: f64,
    pub min_time: f64,
    pub max_used_time: f64,
    /// `max_used_time - min_time`.
    pub excess: f64,
    /// Excess divided by the minimum path time (or the raw excess when
    /// that time is zero).
    pub relative_excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WardropReport {
    pub entries: Vec<OdExcess>,
    pub max_relative_excess: f64,
    /// No relative excess above the tolerance.
    pub ok: bool,
}

/// Checks that every used path of every driver OD pair is a shortest path.
pub fn check_wardrop(
    problem: &CdaProblem,
    solution: &EquilibriumSolution,
    tol: f64,
) -> WardropReport {
    let net = &*problem.network;
    let times: Vec<f64> = problem
        .link_costs
        .iter()
        .zip(&solution.v)
        .map(|(c, &v)| c.time(v))
        .collect();
    let mut entries = Vec::new();
    for (r, &(origin, _)) in problem.origins.iter().enumerate() {
        let sp = dijkstra(net, &times, origin);
        for (s, &dest) in problem.destinations.iter().enumerate() {
            let flow = solution.q[r][s];
            let min_time = sp.labels[dest].unwrap_or(f64::INFINITY);
            let od_flows = &solution.od_link_flows[problem.od_index(r, s)];
            let max_used_time = if origin == dest || flow <= 0.0 {
                min_time
            } else {
                let threshold = USED_SHARE * flow;
                let used = if net.node_count() <= DECOMPOSITION_NODES {
                    decomposed_max(net, &times, od_flows, origin, dest, threshold)
                } else {
                    longest_used(net, &times, od_flows, origin, dest, threshold)
                };
                used.unwrap_or(min_time)
            };
            let excess = (max_used_time - min_time).max(0.0);
            let relative_excess = if min_time > 0.0 {
                excess / min_time
            } else {
                excess
            };
            entries.push(OdExcess {
                od: (origin, dest),
                flow,
                min_time,
                max_used_time,
                excess,
                relative_excess,
            });
        }
    }
    let max_relative_excess = entries
        .iter()
        .map(|e| e.relative_excess)
        .fold(0.0, f64::max);
    WardropReport {
        ok: max_relative_excess <= tol,
        entries,
        max_relative_excess,
    }
}

/// Peels flow-carrying paths off the OD link flows and returns the largest
/// time among paths carrying more than `threshold`.
fn decomposed_max(
    net: &Network,
    times: &[f64],
    od_flows: &[f64],
    origin: NodeId,
    dest: NodeId,
    threshold: f64,
) -> Option<f64> {
    let mut residual = od_flows.to_vec();
    let floor = threshold * 1e-3;
    let mut worst: Option<f64> = None;
    for _ in 0..10 * net.link_count().max(1) {
        // Follow the largest residual out-link until the destination.
        let mut path = Vec::new();
        let mut visited = vec![false; net.node_count()];
        let mut n = origin;
        visited[n] = true;
        while n != dest {
            let next = net
                .out_links(n)
                .iter()
                .copied()
                .filter(|&a| residual[a] > floor)
                .max_by(|&a, &b| residual[a].total_cmp(&residual[b]));
            let Some(a) = next else { break };
            path.push(a);
            n = net.link(a).head;
            if visited[n] {
                // Cancel the cycle and restart.
                let start = path
                    .iter()
                    .position(|&l| net.link(l).tail == n)
                    .unwrap_or(0);
                let cycle = &path[start..];
                let m = cycle
                    .iter()
                    .map(|&l| residual[l])
                    .fold(f64::INFINITY, f64::min);
                for &l in cycle {
                    residual[l] -= m;
                }
                path.clear();
                break;
            }
            visited[n] = true;
        }
        if path.is_empty() {
            if net.out_links(origin).iter().all(|&a| residual[a] <= floor) {
                break;
            }
            continue;
        }
        if n != dest {
            break;
        }
        let m = path
            .iter()
            .map(|&l| residual[l])
            .fold(f64::INFINITY, f64::min);
        for &l in &path {
            residual[l] -= m;
        }
        if m > threshold {
            let t: f64 = path.iter().map(|&l| times[l]).sum();
            worst = Some(worst.map_or(t, |w: f64| w.max(t)));
        }
    }
    worst
}

/// Longest origin-destination time within the subgraph of links carrying
/// more than `threshold`, using label conditions on its topological order.
fn longest_used(
    net: &Network,
    times: &[f64],
    od_flows: &[f64],
    origin: NodeId,
    dest: NodeId,
    threshold: f64,
) -> Option<f64> {
    let n = net.node_count();
    let used: Vec<bool> = od_flows.iter().map(|&f| f > threshold).collect();
    let mut indegree = vec![0usize; n];
    for (a, l) in net.links().iter().enumerate() {
        if used[a] {
            indegree[l.head] += 1;
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut stack: Vec<NodeId> = (0..n).filter(|&i| indegree[i] == 0).collect();
    while let Some(i) = stack.pop() {
        order.push(i);
        for &a in net.out_links(i) {
            if used[a] {
                let h = net.link(a).head;
                indegree[h] -= 1;
                if indegree[h] == 0 {
                    stack.push(h);
                }
            }
        }
    }
    if order.len() < n {
        // A used cycle: fall back to decomposition.
        return decomposed_max(net, times, od_flows, origin, dest, threshold);
    }
    let mut longest = vec![f64::NEG_INFINITY; n];
    longest[origin] = 0.0;
    for &i in &order {
        if longest[i] == f64::NEG_INFINITY {
            continue;
        }
        for &a in net.out_links(i) {
            if used[a] {
                let h = net.link(a).head;
                longest[h] = longest[h].max(longest[i] + times[a]);
            }
        }
    }
    longest[dest].is_finite().then_some(longest[dest])
}
