use proptest::prelude::*;
use rideprice::fixtures::three_node_network;
use rideprice::oracles::{enumerate_paths, path_ue_oracle, simplex_qp_bruteforce};
use rideprice::{augmented_w, Error, Link, Network, OdPair, SimplexPoint};

#[test]
fn three_node_paths_are_direct_and_via_the_third_node() {
    let net = three_node_network();
    let mut set = enumerate_paths(&net, OdPair::new(0, 1)).unwrap().paths;
    set.sort();
    // links 1-2 (0), 1-3 (2) and 3-2 (5)
    assert_eq!(set, vec![vec![0], vec![2, 5]]);
}

#[test]
fn same_origin_and_destination_has_no_paths() {
    let net = three_node_network();
    assert!(enumerate_paths(&net, OdPair::new(1, 1))
        .unwrap()
        .paths
        .is_empty());
}

#[test]
fn nine_nodes_are_refused() {
    let links = (0..8)
        .map(|i| Link::bpr(i, i, i + 1, 1.0, 10.0, 4))
        .collect();
    let net = Network::new(9, links).unwrap();
    assert!(matches!(
        enumerate_paths(&net, OdPair::new(0, 8)),
        Err(Error::Refused(_))
    ));
}

#[test]
fn single_path_carries_all_demand() {
    let links = vec![
        Link::bpr(0, 0, 1, 4.0, 10.0, 4),
        Link::bpr(1, 1, 2, 6.0, 10.0, 4),
    ];
    let net = Network::new(3, links).unwrap();
    let v = path_ue_oracle(&net, &[(OdPair::new(0, 2), 17.0)], 1e-12).unwrap();
    assert!((v[0] - 17.0).abs() < 1e-9 && (v[1] - 17.0).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bruteforce_qp_matches_closed_form(
        raw in prop::collection::vec(0.01f64..1.0, 3),
        es in prop::collection::vec(0.0f64..5.0, 3),
        r in 0.05f64..5.0,
    ) {
        let total: f64 = raw.iter().sum();
        let phi: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let (value, z) = augmented_w(&SimplexPoint::new(phi.clone()).unwrap(), r, &es).unwrap();
        let (bv, bz) = simplex_qp_bruteforce(&phi, r, &es);
        prop_assert!((value - bv).abs() <= 1e-8);
        for (a, b) in z.phi.iter().zip(&bz) {
            prop_assert!((a - b).abs() <= 1e-8);
        }
    }
}
