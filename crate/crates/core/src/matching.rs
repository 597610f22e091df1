//! Matching-time machinery: Cobb-Douglas queue dynamics, the power-law
//! wait-time regression, network augmentation and the rider binary logit.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::network::{CostKind, Link, LinkId, Network, Node, NodeId, NodeKind};

/// Flow floor applied before evaluating a wait time.
pub const FLOW_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchingParams {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl MatchingParams {
    pub fn new(alpha0: f64, alpha1: f64, alpha2: f64) -> Result<Self> {
        if !(alpha0 >= 0.0 && alpha1 > 0.0 && alpha2 > 0.0) {
            return Err(config(
                "matching elasticities must be positive and alpha0 non-negative",
            ));
        }
        Ok(MatchingParams {
            alpha0,
            alpha1,
            alpha2,
        })
    }

    /// Matches per minute with `nd` idle drivers and `nr` waiting riders.
    pub fn rate(&self, nd: f64, nr: f64) -> f64 {
        self.alpha0 * nd.max(0.0).powf(self.alpha1) * nr.max(0.0).powf(self.alpha2)
    }
}

impl Default for MatchingParams {
    fn default() -> Self {
        MatchingParams {
            alpha0: 0.1,
            alpha1: 0.6,
            alpha2: 0.6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueSimConfig {
    /// Horizon in minutes.
    pub horizon: f64,
    pub dt: f64,
    pub n_d0: f64,
    pub n_r0: f64,
}

impl Default for QueueSimConfig {
    fn default() -> Self {
        QueueSimConfig {
            horizon: 60.0,
            dt: 0.01,
            n_d0: 0.0,
            n_r0: 0.0,
        }
    }
}

impl QueueSimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.dt > 0.0 && self.dt <= self.horizon / 100.0) {
            return Err(config(
                "queue simulation needs horizon > 0 and 0 < dt <= horizon/100",
            ));
        }
        if !(self.n_d0 >= 0.0 && self.n_r0 >= 0.0) {
            return Err(config("initial queue lengths must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueOutcome {
    /// Average driver wait in minutes.
    pub driver_wait: f64,
    pub rider_wait: f64,
    /// Cumulative matches over the horizon.
    pub total_matches: f64,
    /// Smallest queue length seen on either side.
    pub min_count: f64,
}

/// Integrates the idle-driver and waiting-rider queues with RK4.
pub fn simulate_queue(
    f_d: f64,
    f_r: f64,
    params: &MatchingParams,
    cfg: &QueueSimConfig,
) -> Result<QueueOutcome> {
    if !(f_d > 0.0 && f_r > 0.0) {
        return Err(domain(format!(
            "arrival rates must be positive, found ({f_d}, {f_r})"
        )));
    }
    cfg.validate()?;
    let steps = (cfg.horizon / cfg.dt).round() as usize;
    let dt = cfg.horizon / steps as f64;
    let deriv = |nd: f64, nr: f64| {
        let m = params.rate(nd, nr);
        (f_d - m, f_r - m)
    };
    let (mut nd, mut nr) = (cfg.n_d0, cfg.n_r0);
    let (mut area_d, mut area_r, mut matches) = (0.0, 0.0, 0.0);
    let mut min_count = nd.min(nr);
    let mut m_prev = params.rate(nd, nr);
    for _ in 0..steps {
        let (k1d, k1r) = deriv(nd, nr);
        let (k2d, k2r) = deriv(nd + 0.5 * dt * k1d, nr + 0.5 * dt * k1r);
        let (k3d, k3r) = deriv(nd + 0.5 * dt * k2d, nr + 0.5 * dt * k2r);
        let (k4d, k4r) = deriv(nd + dt * k3d, nr + dt * k3r);
        let nd_next = (nd + dt / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d)).max(0.0);
        let nr_next = (nr + dt / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r)).max(0.0);
        let m_next = params.rate(nd_next, nr_next);
        area_d += 0.5 * dt * (nd + nd_next);
        area_r += 0.5 * dt * (nr + nr_next);
        matches += 0.5 * dt * (m_prev + m_next);
        nd = nd_next;
        nr = nr_next;
        m_prev = m_next;
        min_count = min_count.min(nd).min(nr);
    }
    Ok(QueueOutcome {
        driver_wait: area_d / (f_d * cfg.horizon),
        rider_wait: area_r / (f_r * cfg.horizon),
        total_matches: matches,
        min_count,
    })
}

/// Power-law wait time `t_i = a0 * f_i^a1 * f_{-i}^a2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaitFit {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub r_squared: f64,
    pub sample_count: usize,
}

impl WaitFit {
    /// A fit with known coefficients (no regression behind it).
    pub fn with_coefficients(a0: f64, a1: f64, a2: f64) -> Self {
        WaitFit {
            a0,
            a1,
            a2,
            r_squared: 1.0,
            sample_count: 0,
        }
    }

    pub fn wait(&self, f_own: f64, f_other: f64) -> f64 {
        self.a0 * f_own.max(FLOW_FLOOR).powf(self.a1) * f_other.max(FLOW_FLOOR).powf(self.a2)
    }
}

pub fn wait_time(fit: &WaitFit, f_i: f64, f_minus_i: f64) -> Result<f64> {
    if !(f_i > 0.0 && f_minus_i > 0.0) {
        return Err(domain(format!(
            "wait time needs positive flows, found ({f_i}, {f_minus_i})"
        )));
    }
    Ok(fit.a0 * f_i.powf(fit.a1) * f_minus_i.powf(fit.a2))
}

/// One simulated grid point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaitSample {
    pub f_d: f64,
    pub f_r: f64,
    pub t_d: f64,
    pub t_r: f64,
}

/// `n x n` log-spaced grid over `[lo, hi]` on both sides.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    let axis: Vec<f64> = (0..n)
        .map(|i| {
            let u = if n == 1 {
                0.0
            } else {
                i as f64 / (n - 1) as f64
            };
            (lo.ln() + u * (hi.ln() - lo.ln())).exp()
        })
        .collect();
    axis.iter()
        .flat_map(|&d| axis.iter().map(move |&r| (d, r)))
        .collect()
}

pub fn default_grid() -> Vec<(f64, f64)> {
    log_grid(0.5, 60.0, 10)
}

/// Simulates every grid point; the output keeps grid order.
pub fn simulate_grid(
    params: &MatchingParams,
    cfg: &QueueSimConfig,
    grid: &[(f64, f64)],
) -> Result<Vec<WaitSample>> {
    grid.par_iter()
        .map(|&(f_d, f_r)| {
            let o = simulate_queue(f_d, f_r, params, cfg)?;
            Ok(WaitSample {
                f_d,
                f_r,
                t_d: o.driver_wait,
                t_r: o.rider_wait,
            })
        })
        .collect()
}

/// Ordinary least squares of `ln t` on `(1, ln f_own, ln f_other)`.
pub fn fit_power_law(points: &[(f64, f64, f64)]) -> Result<WaitFit> {
    if points.len() < 9 {
        return Err(Error::Regression(format!(
            "need at least 9 samples, found {}",
            points.len()
        )));
    }
    if points
        .iter()
        .any(|&(a, b, t)| !(a > 0.0 && b > 0.0 && t > 0.0))
    {
        return Err(Error::Regression(
            "flows and wait times must be positive".into(),
        ));
    }
    let n = points.len();
    let x = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => points[i].0.ln(),
        _ => points[i].1.ln(),
    });
    let y = DVector::from_iterator(n, points.iter().map(|p| p.2.ln()));
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::Regression(
            "regressors are collinear in log space".into(),
        ));
    }
    let beta = svd
        .solve(&y, 1e-12 * smax)
        .map_err(|e| Error::Regression(e.to_string()))?;
    let fitted = &x * &beta;
    let mean = y.mean();
    let ss_res = (&y - &fitted).norm_squared();
    let ss_tot = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(WaitFit {
        a0: beta[0].exp(),
        a1: beta[1],
        a2: beta[2],
        r_squared,
        sample_count: n,
    })
}

/// Driver-side and rider-side fits from a simulated grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaitRegression {
    pub driver: WaitFit,
    pub rider: WaitFit,
    pub samples: Vec<WaitSample>,
}

pub fn fit_wait_regression(
    params: &MatchingParams,
    cfg: &QueueSimConfig,
    f_grid: &[(f64, f64)],
) -> Result<WaitRegression> {
    if f_grid.len() < 9 {
        return Err(Error::Regression(format!(
            "grid needs at least 9 points, found {}",
            f_grid.len()
        )));
    }
    let samples = simulate_grid(params, cfg, f_grid)?;
    let drivers: Vec<_> = samples.iter().map(|s| (s.f_d, s.f_r, s.t_d)).collect();
    let riders: Vec<_> = samples.iter().map(|s| (s.f_r, s.f_d, s.t_r)).collect();
    Ok(WaitRegression {
        driver: fit_power_law(&drivers)?,
        rider: fit_power_law(&riders)?,
        samples,
    })
}

/// Writes the regression samples as `f_d,f_r,t_d,t_r`.
pub fn write_samples_csv<W: Write>(out: W, samples: &[WaitSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in samples {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

/// Market nodes created for one rider node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Market {
    /// The rider node, which becomes the market `s`.
    pub market: NodeId,
    /// `s'`, taking over the road links of `s`.
    pub connector: NodeId,
    /// `s''`, where potential riders enter.
    pub rider_source: NodeId,
    /// `s' -> s`, driver waiting.
    pub driver_wait_link: LinkId,
    /// `s'' -> s`, rider waiting.
    pub rider_wait_link: LinkId,
    /// `s'' -> s'`, travelers who drive.
    pub drive_link: LinkId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedNetwork {
    pub network: Network,
    pub markets: Vec<Market>,
}

impl AugmentedNetwork {
    /// Node where drivers located at `n` enter the road network.
    pub fn driver_node(&self, n: NodeId) -> NodeId {
        self.markets
            .iter()
            .find(|m| m.market == n)
            .map_or(n, |m| m.connector)
    }
}

/// Adds connector and rider-source nodes for every rider node and moves the
/// road links of each rider node onto its connector.
pub fn augment_network(g: &Network, rider_nodes: &[NodeId]) -> Result<AugmentedNetwork> {
    let n = g.node_count();
    let mut nodes: Vec<Node> = g.nodes().to_vec();
    let mut links: Vec<Link> = g.links().to_vec();
    let mut seen = vec![false; n];
    for &s in rider_nodes {
        if s >= n {
            return Err(config(format!(
                "rider node {} is not in the network",
                s + 1
            )));
        }
        if g.nodes()[s].kind.is_augmented() || seen[s] {
            return Err(Error::AlreadyAugmented(s + 1));
        }
        seen[s] = true;
    }
    let mut next_id = links.iter().map(|l| l.id).max().unwrap_or(0) + 1;
    let mut markets = Vec::with_capacity(rider_nodes.len());
    for &s in rider_nodes {
        let connector = nodes.len();
        let rider_source = connector + 1;
        nodes[s].kind = NodeKind::Market;
        nodes.push(Node {
            id: connector,
            kind: NodeKind::Connector,
        });
        nodes.push(Node {
            id: rider_source,
            kind: NodeKind::RiderSource,
        });
        for l in links.iter_mut().filter(|l| l.cost_kind == CostKind::Bpr) {
            if l.tail == s {
                l.tail = connector;
            }
            if l.head == s {
                l.head = connector;
            }
        }
        let base = links.len();
        for (tail, kind) in [
            (connector, CostKind::MatchingWait),
            (rider_source, CostKind::MatchingWait),
        ] {
            links.push(Link::with_kind(next_id, tail, s, kind));
            next_id += 1;
        }
        links.push(Link::with_kind(
            next_id,
            rider_source,
            connector,
            CostKind::Zero,
        ));
        next_id += 1;
        markets.push(Market {
            market: s,
            connector,
            rider_source,
            driver_wait_link: base,
            rider_wait_link: base + 1,
            drive_link: base + 2,
        });
    }
    Ok(AugmentedNetwork {
        network: Network::from_parts(nodes, links)?,
        markets,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiderCoefficients {
    pub beta0p: f64,
    pub beta1p: f64,
    pub beta2p: f64,
}

impl RiderCoefficients {
    pub fn new(beta0p: f64, beta1p: f64, beta2p: f64) -> Result<Self> {
        if !(beta1p > 0.0) || !beta0p.is_finite() || !beta2p.is_finite() {
            return Err(config("rider coefficients must be finite with beta1' > 0"));
        }
        Ok(RiderCoefficients {
            beta0p,
            beta1p,
            beta2p,
        })
    }
}

/// Riders choosing ride-sourcing at a market with `f_d` drivers.
///
/// `fit` is the rider-side wait model, `t_R = a0 * f_R^a1 * f_D^a2`.
pub fn rider_equilibrium(
    f_d: f64,
    rho: f64,
    potential: f64,
    coeffs: &RiderCoefficients,
    fit: &WaitFit,
) -> f64 {
    if !(potential > 0.0) {
        return 0.0;
    }
    let f_d = f_d.max(FLOW_FLOOR);
    let g = |f: f64| {
        let wait = if fit.a0 == 0.0 { 0.0 } else { fit.wait(f, f_d) };
        wait + ((f / (potential - f)).ln() + coeffs.beta2p * rho - coeffs.beta0p) / coeffs.beta1p
    };
    let (mut lo, mut hi) = (0.0, potential);
    while hi - lo > 1e-10 * potential.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> QueueSimConfig {
        QueueSimConfig::default()
    }

    #[test]
    fn no_matching_grows_linearly() {
        let p = MatchingParams::new(0.0, 0.6, 0.6).unwrap();
        let o = simulate_queue(3.0, 7.0, &p, &cfg()).unwrap();
        assert!((o.driver_wait - 30.0).abs() < 1e-9);
        assert!((o.rider_wait - 30.0).abs() < 1e-9);
    }

    #[test]
    fn symmetric_queues_wait_equally() {
        let p = MatchingParams::default();
        let o = simulate_queue(5.0, 5.0, &p, &cfg()).unwrap();
        assert!((o.driver_wait - o.rider_wait).abs() < 1e-12);
    }

    #[test]
    fn halving_dt_is_stable() {
        let p = MatchingParams::default();
        let a = simulate_queue(4.0, 9.0, &p, &cfg()).unwrap();
        let fine = QueueSimConfig { dt: 0.005, ..cfg() };
        let b = simulate_queue(4.0, 9.0, &p, &fine).unwrap();
        assert!((a.driver_wait - b.driver_wait).abs() / b.driver_wait < 1e-4);
        assert!((a.rider_wait - b.rider_wait).abs() / b.rider_wait < 1e-4);
    }

    #[test]
    fn zero_arrivals_rejected() {
        let p = MatchingParams::default();
        assert!(simulate_queue(0.0, 1.0, &p, &cfg()).is_err());
        let bad = QueueSimConfig { dt: 1.0, ..cfg() };
        assert!(simulate_queue(1.0, 1.0, &p, &bad).is_err());
    }

    #[test]
    fn matches_bounded_by_arrivals() {
        let p = MatchingParams::default();
        for &(d, r) in &[(1.0, 20.0), (20.0, 1.0), (8.0, 8.0)] {
            let o = simulate_queue(d, r, &p, &cfg()).unwrap();
            assert!(o.total_matches <= f64::min(d, r) * 60.0 + 1e-9);
            assert!(o.min_count >= 0.0);
        }
    }

    #[test]
    fn exact_power_law_recovered() {
        let pts: Vec<_> = log_grid(0.5, 60.0, 4)
            .into_iter()
            .map(|(a, b)| (a, b, 2.0 * a / b))
            .collect();
        let f = fit_power_law(&pts).unwrap();
        assert!((f.a0 - 2.0).abs() < 1e-9);
        assert!((f.a1 - 1.0).abs() < 1e-9);
        assert!((f.a2 + 1.0).abs() < 1e-9);
        assert!((f.r_squared - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_grids_rejected() {
        assert!(fit_power_law(&[(1.0, 1.0, 1.0)]).is_err());
        let line: Vec<_> = (1..=12).map(|i| (i as f64, i as f64, 1.0)).collect();
        assert!(matches!(fit_power_law(&line), Err(Error::Regression(_))));
        let p = MatchingParams::default();
        assert!(fit_wait_regression(&p, &cfg(), &[(1.0, 1.0)]).is_err());
    }

    #[test]
    fn residuals_orthogonal_to_regressors() {
        let pts: Vec<_> = log_grid(1.0, 30.0, 4)
            .into_iter()
            .enumerate()
            .map(|(i, (a, b))| {
                (
                    a,
                    b,
                    a.powf(0.7) * b.powf(-0.3) * (1.0 + 0.1 * ((i * 7 % 5) as f64 - 2.0)),
                )
            })
            .collect();
        let f = fit_power_law(&pts).unwrap();
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &(a, b, t) in &pts {
            let e = t.ln() - (f.a0.ln() + f.a1 * a.ln() + f.a2 * b.ln());
            s0 += e;
            s1 += e * a.ln();
            s2 += e * b.ln();
        }
        assert!(s0.abs() < 1e-9 && s1.abs() < 1e-9 && s2.abs() < 1e-9);
    }

    #[test]
    fn wait_time_examples() {
        let f = WaitFit::with_coefficients(3.0, 0.5, -0.5);
        assert_eq!(wait_time(&f, 1.0, 1.0).unwrap(), 3.0);
        assert!(wait_time(&f, 2.0, 1.0).unwrap() > wait_time(&f, 1.0, 1.0).unwrap());
        assert!(wait_time(&f, 0.0, 1.0).is_err());
        let paper = WaitFit::with_coefficients(6.29, 2.24, -2.40);
        assert!((wait_time(&paper, 2.0, 2.0).unwrap() - 5.63).abs() < 0.01);
    }

    fn three_node() -> Network {
        crate::network::load_network(crate::fixtures::THREE_NODE_NET).unwrap()
    }

    #[test]
    fn augmentation_counts() {
        let g = three_node();
        let a = augment_network(&g, &[1, 2]).unwrap();
        assert_eq!(a.network.node_count(), 7);
        assert_eq!(a.network.link_count(), g.link_count() + 6);
        for col in 0..a.network.link_count() {
            let sum: i32 = (0..7).map(|n| a.network.incidence(n, col) as i32).sum();
            assert_eq!(sum, 0);
        }
        let m = a.markets[0];
        assert_eq!(a.network.link(m.drive_link).cost_kind, CostKind::Zero);
        assert_eq!(a.network.link(m.driver_wait_link).head, 1);
        assert_eq!(a.driver_node(1), m.connector);
        assert_eq!(a.driver_node(0), 0);
    }

    #[test]
    fn augmentation_edge_cases() {
        let g = three_node();
        assert_eq!(augment_network(&g, &[]).unwrap().network, g);
        let a = augment_network(&g, &[1]).unwrap();
        assert!(matches!(
            augment_network(&a.network, &[1]),
            Err(Error::AlreadyAugmented(2))
        ));
        assert!(augment_network(&g, &[1, 1]).is_err());
    }

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn rider_logit_without_wait() {
        let free = WaitFit::with_coefficients(0.0, 1.0, -1.0);
        let c = RiderCoefficients::new(0.0, 1.0, 0.6).unwrap();
        assert!((rider_equilibrium(5.0, 0.0, 300.0, &c, &free) - 150.0).abs() < 1e-8);
        let c = RiderCoefficients::new(0.4, 1.0, 0.6).unwrap();
        let f = rider_equilibrium(5.0, 3.0, 300.0, &c, &free);
        assert!((f - 300.0 * sigmoid(0.4 - 1.8)).abs() < 1e-8);
    }

    #[test]
    fn rider_demand_vanishes_without_drivers() {
        let fit = WaitFit::with_coefficients(6.29, 2.24, -2.40);
        let c = RiderCoefficients::new(0.0, 1.0, 0.6).unwrap();
        let f = rider_equilibrium(1e-9, 0.0, 300.0, &c, &fit);
        assert!(f < 1e-3);
    }

    proptest! {
        #[test]
        fn rider_flow_monotone(fd in 1.0f64..60.0, rho in -5.0f64..20.0) {
            let fit = WaitFit::with_coefficients(6.29, 2.24, -2.40);
            let c = RiderCoefficients::new(0.0, 1.0, 0.6).unwrap();
            let base = rider_equilibrium(fd, rho, 300.0, &c, &fit);
            prop_assert!(rider_equilibrium(fd, rho + 0.5, 300.0, &c, &fit) < base);
            let more_drivers = rider_equilibrium(fd + 0.5, rho, 300.0, &c, &fit);
            prop_assert!(more_drivers >= base);
            if rho <= 5.0 {
                prop_assert!(more_drivers > base);
            }
        }

        #[test]
        fn queues_stay_non_negative(fd in 0.5f64..60.0, fr in 0.5f64..60.0) {
            let o = simulate_queue(fd, fr, &MatchingParams::default(), &QueueSimConfig { horizon: 10.0, ..QueueSimConfig::default() }).unwrap();
            prop_assert!(o.min_count >= 0.0);
            prop_assert!(o.total_matches <= fd.min(fr) * 10.0 + 1e-9);
        }
    }
}
