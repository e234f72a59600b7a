use proptest::prelude::*;
use qflp::ingestion::{all_pairs_rtt, id_order, parse_graphml_topology, DEFAULT_MS_PER_KM};

/// Ring of `n` coordinated nodes plus chords, declared in the given order.
fn graphml(coords: &[(f64, f64)], chords: &[(usize, usize)], order: &[usize]) -> String {
    let n = coords.len();
    let mut s = String::from(
        r#"<?xml version="1.0"?>
<graphml xmlns="http://graphml.graphdrawing.org/xmlns">
  <key attr.name="Latitude" attr.type="double" for="node" id="d1"/>
  <key attr.name="Longitude" attr.type="double" for="node" id="d2"/>
  <graph edgedefault="undirected">
"#,
    );
    for &i in order {
        let (lat, lon) = coords[i];
        s += &format!("    <node id=\"{i}\"><data key=\"d1\">{lat}</data><data key=\"d2\">{lon}</data></node>\n");
    }
    for i in 0..n {
        s += &format!("    <edge source=\"{i}\" target=\"{}\"/>\n", (i + 1) % n);
    }
    for &(a, b) in chords {
        if a % n != b % n {
            s += &format!("    <edge source=\"{}\" target=\"{}\"/>\n", a % n, b % n);
        }
    }
    s + "  </graph>\n</graphml>\n"
}

fn topology() -> impl Strategy<Value = (Vec<(f64, f64)>, Vec<(usize, usize)>, Vec<usize>)> {
    (3usize..12).prop_flat_map(|n| {
        (
            prop::collection::vec((-60.0f64..60.0, -170.0f64..170.0), n),
            prop::collection::vec((0usize..n, 0usize..n), 0..8),
            Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rtt_matrix_is_a_metric((coords, chords, order) in topology()) {
        let t = parse_graphml_topology(&graphml(&coords, &chords, &order)).unwrap();
        let d = all_pairs_rtt(&t, DEFAULT_MS_PER_KM).unwrap();
        let n = d.len();
        for i in 0..n {
            prop_assert_eq!(d[i][i], 0.0);
            for j in 0..n {
                prop_assert_eq!(d[i][j], d[j][i]);
                for k in 0..n {
                    prop_assert!(d[i][j] <= d[i][k] + d[k][j] + 1e-9);
                }
            }
        }
    }

    #[test]
    fn declaration_order_irrelevant((coords, chords, order) in topology()) {
        let sorted: Vec<usize> = (0..coords.len()).collect();
        let a = parse_graphml_topology(&graphml(&coords, &chords, &order)).unwrap();
        let b = parse_graphml_topology(&graphml(&coords, &chords, &sorted)).unwrap();
        prop_assert_eq!(&a.nodes, &b.nodes);
        prop_assert_eq!(all_pairs_rtt(&a, 0.01).unwrap(), all_pairs_rtt(&b, 0.01).unwrap());
        for w in a.nodes.windows(2) {
            prop_assert!(id_order(&w[0].id, &w[1].id).is_lt());
        }
    }
}
