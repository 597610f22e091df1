mod common;

use std::sync::Arc;

use proptest::prelude::*;
use rideprice::fixtures::{three_node_cda, three_node_joint, three_node_network};
use rideprice::oracles::{enumerate_paths, path_ue_oracle};
use rideprice::{
    augment_network, check_wardrop, solve_cda, solve_diagonalized, total_travel_time, CdaOptions,
    CdaProblem, DiagonalOptions, EquilibriumSolution, JointProblem, Link, Network, OdPair,
    RiderCoefficients, UtilityCoefficients, WaitFit, WaitModel,
};

use common::{five_node_pricing, max_diff, FIVE_NODE_SEED};

fn frozen(problem: &CdaProblem, sol: &EquilibriumSolution) -> Vec<(OdPair, f64)> {
    let mut out = Vec::new();
    for (r, &(o, _)) in problem.origins.iter().enumerate() {
        for (s, &d) in problem.destinations.iter().enumerate() {
            out.push((OdPair::new(o, d), sol.q[r][s]));
        }
    }
    out
}

fn symmetric_three_node(capacity: f64) -> Network {
    let pairs = [(0, 1), (1, 0), (0, 2), (2, 0), (1, 2), (2, 1)];
    let links = pairs
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| Link::bpr(i, a, b, 20.0, capacity, 2))
        .collect();
    Network::new(3, links).unwrap()
}

#[test]
fn uncongested_flows_follow_free_flow_logit() {
    let t0 = [12.0, 12.0, 15.0, 15.0, 1.0, 1.0];
    let links = [(0, 1), (1, 0), (0, 2), (2, 0), (1, 2), (2, 1)]
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| Link::bpr(i, a, b, t0[i], 1e9, 4))
        .collect();
    let net = Arc::new(Network::new(3, links).unwrap());
    let prices = vec![52.0, 57.0];
    let coeffs = UtilityCoefficients::new(vec![0.0, 0.3], 1.0, 0.6).unwrap();
    let p = CdaProblem::new(
        net.clone(),
        vec![(0, 80.0)],
        vec![1, 2],
        prices.clone(),
        coeffs.clone(),
    )
    .unwrap();
    let sol = solve_cda(&p, &CdaOptions::with_tol(1e-12)).unwrap();
    // free-flow shortest times by enumeration: 0->1 direct 12, 0->2 via 1 is 13
    let times: Vec<f64> = [1usize, 2]
        .iter()
        .map(|&d| {
            enumerate_paths(&net, OdPair::new(0, d))
                .unwrap()
                .paths
                .iter()
                .map(|path| path.iter().map(|&a| t0[a]).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    assert_eq!(times, vec![12.0, 13.0]);
    let u: Vec<f64> = (0..2)
        .map(|s| coeffs.beta0[s] - times[s] + 0.6 * prices[s])
        .collect();
    let z: f64 = u.iter().map(|x| x.exp()).sum();
    for s in 0..2 {
        let q = 80.0 * u[s].exp() / z;
        assert!((sol.q[0][s] - q).abs() <= 1e-6, "{} vs {q}", sol.q[0][s]);
        assert!((sol.t_od[0][s] - times[s]).abs() <= 1e-6);
    }
}

#[test]
fn single_path_takes_all_drivers() {
    let net = Network::new(2, vec![Link::bpr(0, 0, 1, 5.0, 1e9, 4)]).unwrap();
    let p = CdaProblem::new(
        Arc::new(net.clone()),
        vec![(0, 10.0)],
        vec![1],
        vec![40.0],
        UtilityCoefficients::uniform(1, 0.0, 1.0, 0.6).unwrap(),
    )
    .unwrap();
    let sol = solve_cda(&p, &CdaOptions::default()).unwrap();
    assert!((sol.q[0][0] - 10.0).abs() < 1e-12);
    assert!((sol.v[0] - 10.0).abs() < 1e-12);
    assert!((total_travel_time(&sol, &net) - 50.0).abs() < 1e-9);
}

#[test]
fn early_stop_shows_positive_wardrop_excess() {
    // three routes; the first line search only sees the two shortest
    let links = vec![
        Link::bpr(0, 0, 1, 10.0, 5.0, 4),
        Link::bpr(1, 0, 2, 6.0, 20.0, 4),
        Link::bpr(2, 2, 1, 6.0, 20.0, 4),
        Link::bpr(3, 0, 3, 7.0, 1e9, 4),
        Link::bpr(4, 3, 1, 7.0, 1e9, 4),
    ];
    let p = CdaProblem::new(
        Arc::new(Network::new(4, links).unwrap()),
        vec![(0, 50.0)],
        vec![1],
        vec![50.0],
        UtilityCoefficients::uniform(1, 0.0, 1.0, 0.6).unwrap(),
    )
    .unwrap();
    let opts = CdaOptions {
        max_iter: 1,
        ..CdaOptions::with_tol(1e-12)
    };
    let sol = solve_cda(&p, &opts).unwrap();
    assert!(!sol.converged);
    let w = check_wardrop(&p, &sol, 1e-4);
    assert!(w.max_relative_excess > 1e-4, "{}", w.max_relative_excess);
    assert!(!w.ok);
    let done = solve_cda(&p, &CdaOptions::with_tol(1e-10)).unwrap();
    assert!(check_wardrop(&p, &done, 1e-4).ok);
}

#[test]
fn converged_three_node_passes_wardrop() {
    let p = three_node_cda([53.5, 56.5], 0.6).unwrap();
    let sol = solve_cda(&p, &CdaOptions::with_tol(1e-10)).unwrap();
    assert!(sol.converged);
    let w = check_wardrop(&p, &sol, 1e-4);
    assert!(w.ok, "{}", w.max_relative_excess);
}

#[test]
fn travel_time_grows_with_supply() {
    let mut last = 0.0;
    for q in [10.0, 25.0, 50.0, 75.0, 100.0] {
        let mut p = three_node_cda([53.5, 56.5], 0.6).unwrap();
        p.origins = vec![(0, q)];
        let sol = solve_cda(&p, &CdaOptions::with_tol(1e-10)).unwrap();
        let ttt = total_travel_time(&sol, &p.network);
        assert!(ttt >= last, "{q}: {ttt} < {last}");
        last = ttt;
    }
}

fn no_wait(aug_prices: [f64; 2], net: &Network) -> JointProblem {
    let none = WaitFit::with_coefficients(0.0, 1.0, -1.0);
    JointProblem {
        augmented: Arc::new(augment_network(net, &[1, 2]).unwrap()),
        origins: vec![(0, 50.0)],
        prices: aug_prices.to_vec(),
        driver_coeffs: UtilityCoefficients::uniform(2, 0.0, 1.0, 0.6).unwrap(),
        rider_coeffs: RiderCoefficients::new(24.0, 1.0, 0.6).unwrap(),
        potential_riders: vec![300.0; 2],
        wait: WaitModel {
            driver: none,
            rider: none,
        },
    }
}

#[test]
fn zero_wait_reduces_to_plain_cda() {
    let prices = [50.0, 58.0];
    let joint = no_wait(prices, &three_node_network());
    let opts = DiagonalOptions {
        cda: CdaOptions::with_tol(1e-10),
        ..DiagonalOptions::default()
    };
    let sol = solve_diagonalized(&joint, &opts, None).unwrap();
    let plain = solve_cda(
        &three_node_cda(prices, 0.6).unwrap(),
        &CdaOptions::with_tol(1e-10),
    )
    .unwrap();
    assert!(max_diff(&sol.driver_flows, &plain.supply()) <= 1e-6);
}

#[test]
fn symmetric_markets_split_drivers_evenly() {
    let mut joint = three_node_joint([40.0, 40.0]).unwrap();
    joint.augmented = Arc::new(augment_network(&symmetric_three_node(23.2), &[1, 2]).unwrap());
    let sol = solve_diagonalized(&joint, &DiagonalOptions::default(), None).unwrap();
    assert!(sol.converged);
    assert!((sol.driver_flows[0] - sol.driver_flows[1]).abs() <= 1e-6);
    assert!((sol.rider_flows[0] - sol.rider_flows[1]).abs() <= 1e-6);
}

#[test]
fn joint_fixed_point_has_zero_residual() {
    let joint = three_node_joint([37.46, 38.06]).unwrap();
    let opts = DiagonalOptions {
        cda: CdaOptions::with_tol(1e-10),
        tol: 1e-8,
        max_outer: 500,
    };
    let sol = solve_diagonalized(&joint, &opts, None).unwrap();
    assert!(sol.converged);
    let response = joint.rider_response(&sol.driver_flows);
    assert!(max_diff(&response, &sol.rider_flows) <= 1e-6);
    for e in sol.imbalance() {
        assert!(e.abs() < 0.1, "{e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn three_node_matches_path_oracle(r2 in 40.0f64..70.0, r3 in 40.0f64..70.0) {
        let p = three_node_cda([r2, r3], 0.6).unwrap();
        let sol = solve_cda(&p, &CdaOptions::with_tol(1e-10)).unwrap();
        prop_assert!(sol.converged);
        let oracle = path_ue_oracle(&p.network, &frozen(&p, &sol), 1e-12).unwrap();
        prop_assert!(max_diff(&oracle, &sol.v) <= 1e-4);
    }

    #[test]
    fn supply_is_conserved(rho in prop::collection::vec(20.0f64..60.0, 3)) {
        let base = five_node_pricing(FIVE_NODE_SEED, 0.6);
        let p = base.cda.with_prices(&rho).unwrap();
        let opts = CdaOptions { max_iter: 200, ..CdaOptions::with_tol(1e-8) };
        let sol = solve_cda(&p, &opts).unwrap();
        for (row, &(_, q)) in sol.q.iter().zip(&p.origins) {
            prop_assert!((row.iter().sum::<f64>() - q).abs() <= 1e-9 * q);
            prop_assert!(row.iter().all(|&x| x >= 0.0));
        }
    }
}
