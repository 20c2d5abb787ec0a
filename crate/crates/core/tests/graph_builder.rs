mod common;

use cgt::graph::{build_graph, export_graph, normalize_adjacency, EdgeKind, GraphConfig, GraphFormat, GraphJson};
use cgt::tensor::Tensor;
use proptest::prelude::*;

fn kind_str(k: EdgeKind) -> &'static str {
    k.as_str()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn edges_match_pairwise_oracle(seed in any::<u64>(), n in 1usize..24, d in 1usize..6, strict in any::<bool>()) {
        let mut r = common::rng(seed);
        let rows = common::clustered_rows(&mut r, n, d);
        let cfg = GraphConfig { strict_causal: strict, ..GraphConfig::default() };
        let g = build_graph(&Tensor::from_rows(&rows).unwrap(), &cfg).unwrap();
        let want = common::oracle_graph(&rows, strict);
        prop_assert_eq!(g.edges.len(), want.len());
        for e in &g.edges {
            let (w, k) = want.get(&(e.src, e.dst)).copied().expect("edge missing from oracle");
            prop_assert_eq!(kind_str(e.kind), k);
            prop_assert!((e.weight - w).abs() < 1e-12);
        }
        // The stored adjacency stays symmetric in both modes.
        prop_assert_eq!(g.asymmetry(), 0.0);
    }

    #[test]
    fn normalized_adjacency_is_symmetric_with_bounded_spectrum(seed in any::<u64>(), n in 2usize..16) {
        let mut r = common::rng(seed);
        let rows = common::clustered_rows(&mut r, n, 4);
        let g = build_graph(&Tensor::from_rows(&rows).unwrap(), &GraphConfig::default()).unwrap();
        let a = &g.normalized_adjacency;
        let deg: Vec<f64> = (0..n).map(|i| g.adjacency.row(i).iter().sum()).collect();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((a.at(i, j) - a.at(j, i)).abs() < 1e-15);
                let want = g.adjacency.at(i, j) / (deg[i] * deg[j]).sqrt();
                prop_assert!((a.at(i, j) - want).abs() < 1e-12);
            }
        }
        // D^{-1/2} A D^{-1/2} with non-negative A has spectral radius 1;
        // the Rayleigh quotient with sqrt(deg) attains it.
        let v: Vec<f64> = deg.iter().map(|x| x.sqrt()).collect();
        let av: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a.at(i, j) * v[j]).sum()).collect();
        let q = v.iter().zip(&av).map(|(x, y)| x * y).sum::<f64>() / v.iter().map(|x| x * x).sum::<f64>();
        prop_assert!((q - 1.0).abs() < 1e-9);
        let m = nalgebra::DMatrix::from_row_slice(n, n, a.data());
        let eig = m.symmetric_eigen();
        prop_assert!(eig.eigenvalues.iter().all(|&l| l.abs() <= 1.0 + 1e-9));
    }
}

#[test]
fn worked_example_with_identical_rows() {
    // Twelve identical rows: every offset 3..=10 is semantic at cosine 1,
    // offset 2 is a skip at exp(-1), offset 11 has no edge.
    let rows = vec![vec![1.0, 2.0]; 12];
    let g = build_graph(&Tensor::from_rows(&rows).unwrap(), &GraphConfig::default()).unwrap();
    let a = &g.adjacency;
    assert_eq!(a.at(0, 1), 1.0);
    assert!((a.at(0, 2) - (-1f64).exp()).abs() < 1e-15);
    assert!((a.at(0, 3) - 1.0).abs() < 1e-12);
    assert!((a.at(0, 10) - 1.0).abs() < 1e-12);
    assert_eq!(a.at(0, 11), 0.0);
    assert_eq!(g.count_kind(EdgeKind::Sequential), 2 * 11);
    assert_eq!(g.count_kind(EdgeKind::Skip), 2 * 10);
    // Offsets 3..=10: (12-3) + ... + (12-10) pairs, both directions.
    assert_eq!(g.count_kind(EdgeKind::Semantic), 2 * (9 + 8 + 7 + 6 + 5 + 4 + 3 + 2));
}

#[test]
fn orthogonal_rows_get_no_semantic_edges() {
    let rows: Vec<Vec<f64>> = (0..8).map(|i| (0..8).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let g = build_graph(&Tensor::from_rows(&rows).unwrap(), &GraphConfig::default()).unwrap();
    assert_eq!(g.count_kind(EdgeKind::Semantic), 0);
    assert_eq!(g.count_kind(EdgeKind::Sequential), 14);
    assert_eq!(g.count_kind(EdgeKind::Skip), 12);
}

#[test]
fn strict_mode_only_points_backwards() {
    let rows = vec![vec![1.0, 0.5]; 6];
    let cfg = GraphConfig { strict_causal: true, ..GraphConfig::default() };
    let g = build_graph(&Tensor::from_rows(&rows).unwrap(), &cfg).unwrap();
    assert!(!g.edges.is_empty());
    assert!(g.edges.iter().all(|e| e.src > e.dst));
    let (nb, _) = g.neighborhoods(false);
    for i in 0..g.n {
        assert!(nb.targets[nb.offsets[i]..nb.offsets[i + 1]].iter().all(|&j| j <= i));
    }
}

#[test]
fn single_token_and_bad_inputs() {
    let g = build_graph(&Tensor::from_rows(&[vec![0.3, 0.1]]).unwrap(), &GraphConfig::default()).unwrap();
    assert!(g.edges.is_empty());
    assert_eq!(g.normalized_adjacency.at(0, 0), 0.0);

    let nan = Tensor::from_rows(&[vec![f64::NAN], vec![1.0]]).unwrap();
    assert!(build_graph(&nan, &GraphConfig::default()).is_err());
    let bad = GraphConfig { sem_threshold: 1.5, ..GraphConfig::default() };
    assert!(build_graph(&Tensor::from_rows(&[vec![1.0]]).unwrap(), &bad).is_err());

    let asym = Tensor::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
    assert!(normalize_adjacency(&asym).is_err());
}

#[test]
fn json_export_round_trips_and_dot_lists_each_pair_once() {
    let rows = vec![vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0], vec![1.0, 0.05]];
    let g = build_graph(&Tensor::from_rows(&rows).unwrap(), &GraphConfig::default()).unwrap();
    let json = export_graph(&g, GraphFormat::Json, None);
    let parsed = GraphJson::parse(&json).unwrap();
    assert_eq!(parsed.n, 4);
    assert!(!parsed.normalized);
    assert_eq!(parsed.edges.len(), g.edges.len());
    for (p, e) in parsed.edges.iter().zip(&g.edges) {
        assert_eq!((p.src, p.dst, p.kind), (e.src, e.dst, e.kind));
        assert!((p.weight - e.weight).abs() <= 5e-7);
    }
    assert!(GraphJson::parse(br#"{"n":1,"normalized":false,"edges":[{"src":0,"dst":3,"weight":1.0,"kind":"skip"}]}"#).is_err());

    let labels: Vec<String> = ["a", "\"b\"", "c", "d"].iter().map(|s| s.to_string()).collect();
    let dot = String::from_utf8(export_graph(&g, GraphFormat::Dot, Some(&labels))).unwrap();
    assert!(dot.starts_with("graph cgt {"));
    assert!(dot.contains(r#"label="\"b\"""#));
    let pair_lines = dot.lines().filter(|l| l.contains(" -- ")).count();
    assert_eq!(pair_lines * 2, g.edges.len());
    assert!(dot.contains("kind=sequential"));
    assert!("svg".parse::<GraphFormat>().is_err());
}
