use proptest::prelude::*;
use rideprice::fixtures::sioux_falls_network;
use rideprice::oracles::enumerate_paths;
use rideprice::{bpr_integral, bpr_time, shortest_path, Link, Network, OdPair};

#[test]
fn sioux_falls_dimensions_and_incidence() {
    let net = sioux_falls_network();
    assert_eq!(net.node_count(), 24);
    assert_eq!(net.link_count(), 76);
    let m = net.incidence_matrix();
    for a in 0..net.link_count() {
        let col: Vec<i8> = m.iter().map(|row| row[a]).collect();
        assert_eq!(col.iter().filter(|&&x| x == 1).count(), 1);
        assert_eq!(col.iter().filter(|&&x| x == -1).count(), 1);
    }
}

#[test]
fn fourth_power_bpr_at_twice_capacity() {
    let link = Link::bpr(0, 0, 1, 10.0, 25.0, 4);
    assert!((bpr_time(&link, 50.0).unwrap() - 34.0).abs() < 1e-12);
}

#[test]
fn unreachable_nodes_have_no_label() {
    let net = Network::new(3, vec![Link::bpr(0, 0, 1, 3.0, 10.0, 4)]).unwrap();
    let sp = shortest_path(&net, &[3.0], 0).unwrap();
    assert_eq!(sp.labels[1], Some(3.0));
    assert_eq!(sp.labels[2], None);
}

fn random_network() -> impl Strategy<Value = (Network, Vec<f64>)> {
    (3usize..=6).prop_flat_map(|n| {
        prop::collection::vec((0..n, 0..n, 0.1f64..20.0), 1..16).prop_map(move |raw| {
            let mut links = Vec::new();
            let mut times = Vec::new();
            for (a, b, t) in raw {
                if a != b {
                    links.push(Link::bpr(links.len(), a, b, t, 10.0, 4));
                    times.push(t);
                }
            }
            if links.is_empty() {
                links.push(Link::bpr(0, 0, 1, 1.0, 10.0, 4));
                times.push(1.0);
            }
            (Network::new(n, links).unwrap(), times)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn labels_match_path_enumeration((net, times) in random_network()) {
        let sp = shortest_path(&net, &times, 0).unwrap();
        for dest in 1..net.node_count() {
            let paths = enumerate_paths(&net, OdPair::new(0, dest)).unwrap();
            let best = paths
                .paths
                .iter()
                .map(|p| p.iter().map(|&a| times[a]).sum::<f64>())
                .fold(None, |m: Option<f64>, c| Some(m.map_or(c, |m| m.min(c))));
            match (sp.labels[dest], best) {
                (Some(l), Some(b)) => prop_assert!((l - b).abs() <= 1e-9 * (1.0 + b)),
                (None, None) => {}
                other => prop_assert!(false, "label/enumeration mismatch {other:?}"),
            }
        }
    }

    #[test]
    fn integral_derivative_is_the_time(
        t0 in 1.0f64..30.0,
        cap in 5.0f64..100.0,
        power in 1u32..=4,
        ratio in 0.05f64..3.0,
    ) {
        let link = Link::bpr(0, 0, 1, t0, cap, power);
        let v = ratio * cap;
        let h = 1e-4 * cap;
        let fd = (bpr_integral(&link, v + h).unwrap() - bpr_integral(&link, v - h).unwrap()) / (2.0 * h);
        let t = bpr_time(&link, v).unwrap();
        prop_assert!((fd - t).abs() <= 1e-6 * t);
    }

    #[test]
    fn incidence_columns_sum_to_zero((net, _) in random_network()) {
        let m = net.incidence_matrix();
        for a in 0..net.link_count() {
            prop_assert_eq!(m.iter().map(|row| row[a] as i32).sum::<i32>(), 0);
        }
    }
}
