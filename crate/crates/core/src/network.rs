//! Road network representation, link performance functions and shortest paths.
//!
//! Node ids are dense and 0-based inside the library. Network files and
//! scenario files number nodes from 1, matching the usual numbering of test
//! networks; [`Network::label`] converts back for display.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};

pub type NodeId = usize;
pub type LinkId = usize;

/// Default BPR delay coefficient.
pub const DEFAULT_BPR_COEFF: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Plain,
    DriverOrigin,
    RiderDestination,
    /// Market node `s` of an augmented network.
    Market,
    /// Connector node `s'` of an augmented network.
    Connector,
    /// Rider source node `s''` of an augmented network.
    RiderSource,
}

impl NodeKind {
    pub fn is_augmented(self) -> bool {
        matches!(
            self,
            NodeKind::Market | NodeKind::Connector | NodeKind::RiderSource
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    Bpr,
    /// Waiting time at a market; the cost function is attached by the
    /// matching-time solvers.
    MatchingWait,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    /// External link number (as written in the network file).
    pub id: usize,
    pub tail: NodeId,
    pub head: NodeId,
    /// Free-flow travel time in minutes.
    pub t0: f64,
    /// Capacity in vehicles per hour.
    pub capacity: f64,
    pub bpr_coeff: f64,
    pub bpr_power: u32,
    pub cost_kind: CostKind,
}

impl Link {
    /// A BPR link with the default delay coefficient.
    pub fn bpr(id: usize, tail: NodeId, head: NodeId, t0: f64, capacity: f64, power: u32) -> Self {
        Link {
            id,
            tail,
            head,
            t0,
            capacity,
            bpr_coeff: DEFAULT_BPR_COEFF,
            bpr_power: power,
            cost_kind: CostKind::Bpr,
        }
    }

    pub fn with_kind(id: usize, tail: NodeId, head: NodeId, kind: CostKind) -> Self {
        Link {
            id,
            tail,
            head,
            t0: 0.0,
            capacity: 1.0,
            bpr_coeff: 0.0,
            bpr_power: 1,
            cost_kind: kind,
        }
    }

    /// Cost function used by the equilibrium solvers. Matching-wait links
    /// default to zero cost until a wait model is attached.
    pub fn cost(&self) -> LinkCost {
        match self.cost_kind {
            CostKind::Bpr => LinkCost::Bpr {
                t0: self.t0,
                coeff: self.bpr_coeff,
                capacity: self.capacity,
                power: self.bpr_power as i32,
            },
            CostKind::MatchingWait | CostKind::Zero => LinkCost::Zero,
        }
    }
}

/// BPR travel time `t0 * (1 + coeff * (v / c)^p)`.
pub fn bpr_time(link: &Link, v: f64) -> Result<f64> {
    check_bpr(link, v)?;
    Ok(link.cost().time(v))
}

/// Integral of the BPR travel time from 0 to `v`.
pub fn bpr_integral(link: &Link, v: f64) -> Result<f64> {
    check_bpr(link, v)?;
    Ok(link.cost().integral(v))
}

fn check_bpr(link: &Link, v: f64) -> Result<()> {
    if link.cost_kind != CostKind::Bpr {
        return Err(domain(format!("link {} is not a BPR link", link.id)));
    }
    if !(v >= 0.0) {
        return Err(domain(format!(
            "negative or undefined flow {v} on link {}",
            link.id
        )));
    }
    Ok(())
}

/// Separable link cost function evaluated inside the equilibrium solvers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LinkCost {
    Bpr {
        t0: f64,
        coeff: f64,
        capacity: f64,
        power: i32,
    },
    /// `coeff * max(v, floor)^exponent`; `exponent` must exceed -1.
    Power {
        coeff: f64,
        exponent: f64,
        floor: f64,
    },
    Zero,
}

impl LinkCost {
    #[inline]
    pub fn time(&self, v: f64) -> f64 {
        match *self {
            LinkCost::Bpr {
                t0,
                coeff,
                capacity,
                power,
            } => t0 * (1.0 + coeff * (v / capacity).powi(power)),
            LinkCost::Power {
                coeff,
                exponent,
                floor,
            } => coeff * v.max(floor).powf(exponent),
            LinkCost::Zero => 0.0,
        }
    }

    /// Derivative of [`LinkCost::time`] in `v`.
    #[inline]
    pub fn slope(&self, v: f64) -> f64 {
        match *self {
            LinkCost::Bpr {
                t0,
                coeff,
                capacity,
                power,
            } => {
                if power == 0 {
                    0.0
                } else {
                    t0 * coeff * power as f64 * (v / capacity).powi(power - 1) / capacity
                }
            }
            LinkCost::Power {
                coeff,
                exponent,
                floor,
            } => {
                if v <= floor {
                    0.0
                } else {
                    coeff * exponent * v.powf(exponent - 1.0)
                }
            }
            LinkCost::Zero => 0.0,
        }
    }

    #[inline]
    pub fn integral(&self, v: f64) -> f64 {
        match *self {
            LinkCost::Bpr {
                t0,
                coeff,
                capacity,
                power,
            } => {
                let p1 = (power + 1) as f64;
                t0 * v + t0 * coeff * v * (v / capacity).powi(power) / p1
            }
            LinkCost::Power {
                coeff,
                exponent,
                floor,
            } => {
                let base = coeff * floor.powf(exponent);
                if v <= floor {
                    base * v
                } else {
                    let e1 = exponent + 1.0;
                    base * floor + coeff * (v.powf(e1) - floor.powf(e1)) / e1
                }
            }
            LinkCost::Zero => 0.0,
        }
    }
}

/// An origin-destination pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OdPair {
    pub origin: NodeId,
    pub destination: NodeId,
}

impl OdPair {
    pub fn new(origin: NodeId, destination: NodeId) -> Self {
        OdPair {
            origin,
            destination,
        }
    }

    /// +1 at the origin, -1 at the destination; all zero when they coincide.
    pub fn incidence_vector(&self, node_count: usize) -> Vec<i8> {
        let mut e = vec![0i8; node_count];
        if self.origin != self.destination {
            e[self.origin] = 1;
            e[self.destination] = -1;
        }
        e
    }
}

/// Immutable directed road network with its node-link incidence matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    nodes: Vec<Node>,
    links: Vec<Link>,
    out_links: Vec<Vec<LinkId>>,
    /// Row-major `nodes x links`.
    incidence: Vec<i8>,
}

impl Network {
    /// Builds a network with `node_count` plain nodes.
    pub fn new(node_count: usize, links: Vec<Link>) -> Result<Self> {
        let nodes = (0..node_count)
            .map(|id| Node {
                id,
                kind: NodeKind::Plain,
            })
            .collect();
        Self::from_parts(nodes, links)
    }

    pub fn from_parts(nodes: Vec<Node>, links: Vec<Link>) -> Result<Self> {
        for (i, n) in nodes.iter().enumerate() {
            if n.id != i {
                return Err(config(format!(
                    "node ids must be dense, found {} at position {i}",
                    n.id
                )));
            }
        }
        let n = nodes.len();
        let mut seen = HashSet::new();
        for l in &links {
            if l.tail >= n || l.head >= n {
                return Err(config(format!("link {} references a missing node", l.id)));
            }
            if !seen.insert(l.id) {
                return Err(config(format!("duplicate link id {}", l.id)));
            }
            if l.cost_kind == CostKind::Bpr && !(l.capacity > 0.0 && l.t0 >= 0.0) {
                return Err(config(format!(
                    "link {} needs t0 >= 0 and capacity > 0",
                    l.id
                )));
            }
        }
        let m = links.len();
        let mut incidence = vec![0i8; n * m];
        let mut out_links = vec![Vec::new(); n];
        for (a, l) in links.iter().enumerate() {
            // A self-loop leaves its column at zero.
            incidence[l.tail * m + a] += 1;
            incidence[l.head * m + a] -= 1;
            out_links[l.tail].push(a);
        }
        Ok(Network {
            nodes,
            links,
            out_links,
            incidence,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, a: LinkId) -> &Link {
        &self.links[a]
    }

    pub fn out_links(&self, n: NodeId) -> &[LinkId] {
        &self.out_links[n]
    }

    /// Entry `A[n][a]` of the incidence matrix.
    pub fn incidence(&self, n: NodeId, a: LinkId) -> i8 {
        self.incidence[n * self.links.len() + a]
    }

    /// The incidence matrix as rows of nodes.
    pub fn incidence_matrix(&self) -> Vec<Vec<i8>> {
        let m = self.links.len();
        self.incidence
            .chunks(m.max(1))
            .take(self.nodes.len())
            .map(|r| r.to_vec())
            .collect()
    }

    /// `A * v` for a vector of link flows.
    pub fn node_balance(&self, flows: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nodes.len()];
        for (a, l) in self.links.iter().enumerate() {
            out[l.tail] += flows[a];
            out[l.head] -= flows[a];
        }
        out
    }

    /// 1-based display label of a node.
    pub fn label(&self, n: NodeId) -> usize {
        n + 1
    }

    pub fn set_kind(&mut self, n: NodeId, kind: NodeKind) {
        self.nodes[n].kind = kind;
    }

    pub fn default_costs(&self) -> Vec<LinkCost> {
        self.links.iter().map(Link::cost).collect()
    }

    /// Nodes reachable from `origin` ignoring costs.
    pub fn reachable_from(&self, origin: NodeId) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![origin];
        seen[origin] = true;
        while let Some(n) = stack.pop() {
            for &a in &self.out_links[n] {
                let h = self.links[a].head;
                if !seen[h] {
                    seen[h] = true;
                    stack.push(h);
                }
            }
        }
        seen
    }
}

/// Parses the plain link-table format:
///
/// ```text
/// # comment
/// nodes <N>
/// <link_id> <tail> <head> <t0_minutes> <capacity> <bpr_power> [bpr_coeff]
/// ```
///
/// Node numbers in the file run from 1 to N.
pub fn load_network(text: &str) -> Result<Network> {
    let mut node_count: Option<usize> = None;
    let mut links = Vec::new();
    let mut ids = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let perr = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let Some(n) = node_count else {
            if fields.len() != 2 || fields[0] != "nodes" {
                return Err(perr("expected header `nodes <N>`".into()));
            }
            let n: usize = fields[1]
                .parse()
                .map_err(|_| perr(format!("invalid node count `{}`", fields[1])))?;
            if n == 0 {
                return Err(perr("network needs at least one node".into()));
            }
            node_count = Some(n);
            continue;
        };
        if fields.len() != 6 && fields.len() != 7 {
            return Err(perr(format!(
                "expected 6 or 7 fields, found {}",
                fields.len()
            )));
        }
        let int = |s: &str, what: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|_| perr(format!("invalid {what} `{s}`")))
        };
        let real = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| perr(format!("invalid {what} `{s}`")))
        };
        let id = int(fields[0], "link id")?;
        let tail = int(fields[1], "tail node")?;
        let head = int(fields[2], "head node")?;
        let t0 = real(fields[3], "free-flow time")?;
        let capacity = real(fields[4], "capacity")?;
        let power = int(fields[5], "BPR power")?;
        if !ids.insert(id) {
            return Err(perr(format!("duplicate link id {id}")));
        }
        for node in [tail, head] {
            if node == 0 || node > n {
                return Err(perr(format!("node {node} outside 1..={n}")));
            }
        }
        if capacity <= 0.0 {
            return Err(perr(format!("capacity must be positive, found {capacity}")));
        }
        if t0 < 0.0 {
            return Err(perr(format!(
                "free-flow time must be non-negative, found {t0}"
            )));
        }
        let mut link = Link::bpr(id, tail - 1, head - 1, t0, capacity, power as u32);
        if let Some(c) = fields.get(6) {
            link.bpr_coeff = real(c, "BPR coefficient")?;
        }
        links.push(link);
    }
    let n = node_count.ok_or(Error::Parse {
        line: text.lines().count().max(1),
        message: "missing `nodes <N>` header".into(),
    })?;
    Network::new(n, links)
}

/// One-to-all shortest path labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ShortestPaths {
    /// `None` marks an unreachable node.
    pub labels: Vec<Option<f64>>,
    pub predecessors: Vec<Option<LinkId>>,
}

impl ShortestPaths {
    /// Link sequence from the origin to `dest`, or `None` if unreachable.
    pub fn path_to(&self, network: &Network, dest: NodeId) -> Option<Vec<LinkId>> {
        self.labels[dest]?;
        let mut path = Vec::new();
        let mut n = dest;
        while let Some(a) = self.predecessors[n] {
            path.push(a);
            n = network.link(a).tail;
        }
        path.reverse();
        Some(path)
    }
}

#[derive(PartialEq)]
struct HeapEntry {
    cost: f64,
    node: NodeId,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost, ties broken by node id
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra from `origin` with per-link `times`.
pub fn shortest_path(network: &Network, times: &[f64], origin: NodeId) -> Result<ShortestPaths> {
    if origin >= network.node_count() {
        return Err(domain(format!("origin {origin} is not a node")));
    }
    if times.len() != network.link_count() {
        return Err(domain("one time per link is required"));
    }
    if let Some(a) = times.iter().position(|t| !(*t >= 0.0)) {
        return Err(domain(format!(
            "negative or undefined cost on link {}",
            network.link(a).id
        )));
    }
    Ok(dijkstra(network, times, origin))
}

pub(crate) fn dijkstra(network: &Network, times: &[f64], origin: NodeId) -> ShortestPaths {
    let n = network.node_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[origin] = 0.0;
    heap.push(HeapEntry {
        cost: 0.0,
        node: origin,
    });
    while let Some(HeapEntry { cost, node }) = heap.pop() {
        if done[node] {
            continue;
        }
        done[node] = true;
        for &a in network.out_links(node) {
            let h = network.link(a).head;
            let c = cost + times[a];
            if c < dist[h] {
                dist[h] = c;
                pred[h] = Some(a);
                heap.push(HeapEntry { cost: c, node: h });
            }
        }
    }
    ShortestPaths {
        labels: dist.iter().map(|d| d.is_finite().then_some(*d)).collect(),
        predecessors: pred,
    }
}
