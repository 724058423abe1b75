mod common;

use proptest::prelude::*;
use sagt_core::graph::{compatibility_matrix, cosine_similarity, degree_vector, rw_norm_adjacency, sym_norm_adjacency};
use sagt_core::linalg::Matrix;
use sagt_core::metrics::{dataset_metrics, edge_homophily, local_triangles, pagerank, triangle_count};
use sagt_core::Graph;

fn arb_graph() -> impl Strategy<Value = Graph> {
    (1usize..25, 1usize..5).prop_flat_map(|(n, d)| {
        (
            proptest::collection::vec((0..n, 0..n), 0..3 * n),
            proptest::collection::vec(-1.0f64..1.0, n * d),
            proptest::collection::vec(0usize..3, n),
        )
            .prop_map(move |(edges, x, labels)| {
                Graph::new(n, edges, Matrix::from_vec(n, d, x).unwrap(), labels, 3).unwrap()
            })
    })
}

proptest! {
    #[test]
    fn degrees_sum_to_twice_edges(g in arb_graph()) {
        prop_assert_eq!(degree_vector(&g).iter().sum::<usize>(), 2 * g.num_edges());
        for v in 0..g.num_nodes() {
            prop_assert!(!g.has_edge(v, v));
            for &u in g.neighbors(v) {
                prop_assert!(g.has_edge(u, v));
            }
        }
    }

    #[test]
    fn normalized_adjacencies(g in arb_graph()) {
        let a = sym_norm_adjacency(&g).to_dense();
        prop_assert!(a.max_abs_diff(&a.transpose()) < 1e-15);
        let rw = rw_norm_adjacency(&g);
        for s in rw.row_sums() {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn compatibility_matches_brute_force(g in arb_graph(), tau in -0.5f64..0.9) {
        let c = compatibility_matrix(&g, tau);
        let n = g.num_nodes();
        for i in 0..n {
            for j in 0..n {
                let expect = i != j
                    && cosine_similarity(g.features().row(i), g.features().row(j)).unwrap() > tau;
                prop_assert_eq!(c.contains(i, j), expect, "pair ({}, {})", i, j);
            }
        }
    }

    #[test]
    fn pagerank_is_a_distribution(g in arb_graph()) {
        let pr = pagerank(&g, 0.85, 1e-12);
        let n = g.num_nodes() as f64;
        prop_assert!((pr.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!((dataset_metrics(&g).mean_pagerank - 1.0 / n).abs() < 1e-9);
    }

    #[test]
    fn triangles_match_brute_force(g in arb_graph()) {
        let n = g.num_nodes();
        let mut t = 0;
        for a in 0..n {
            for b in a + 1..n {
                for c in b + 1..n {
                    if g.has_edge(a, b) && g.has_edge(b, c) && g.has_edge(a, c) {
                        t += 1;
                    }
                }
            }
        }
        prop_assert_eq!(triangle_count(&g), t);
        prop_assert_eq!(local_triangles(&g).iter().sum::<usize>(), 3 * t);
    }
}

#[test]
fn homophily_is_one_when_all_labels_agree() {
    let g = common::random_graph(30, 0.2, 3, 1, 4);
    assert!(g.num_edges() > 0);
    assert_eq!(edge_homophily(&g), 1.0);
}

#[test]
fn complete_graph_metrics() {
    let n = 6;
    let edges: Vec<_> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let g = Graph::new(n, edges, Matrix::zeros(n, 1), vec![0; n], 1).unwrap();
    let m = dataset_metrics(&g);
    assert_eq!(m.avg_degree, 5.0);
    assert!((m.clustering - 1.0).abs() < 1e-12);
    assert_eq!(triangle_count(&g), 20);
}

#[test]
fn zero_feature_rows_have_zero_cosine() {
    let x = Matrix::from_rows(&[[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]]).unwrap();
    let g = Graph::new(3, [], x, vec![0, 0, 0], 1).unwrap();
    let c = compatibility_matrix(&g, 0.0);
    assert!(!c.contains(0, 1));
    assert!(!c.contains(0, 2));
}

#[test]
fn invalid_graphs_are_rejected() {
    assert!(Graph::new(2, [(0, 2)], Matrix::zeros(2, 1), vec![0, 0], 1).is_err());
    assert!(Graph::new(2, [], Matrix::zeros(3, 1), vec![0, 0], 1).is_err());
    assert!(Graph::new(2, [], Matrix::zeros(2, 1), vec![0, 4], 2).is_err());
}
