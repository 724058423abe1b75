mod common;

use common::*;
use sagt_core::enrich::{class_representatives, enrich, gcn_amplify, nearest_class, GcnParams};
use sagt_core::graph::{compatibility_matrix, cosine_similarity};
use sagt_core::linalg::Matrix;
use sagt_core::{Error, Graph};

/// σ(Ĉ H W) written out with dense loops and cosines recomputed per pair.
fn dense_gcn(g: &Graph, tau: f64, params: &GcnParams) -> Matrix {
    let n = g.num_nodes();
    let x = g.features();
    let mut c = Matrix::zeros(n, n);
    for i in 0..n {
        c.set(i, i, 1.0);
        for j in 0..n {
            if i != j && cosine_similarity(x.row(i), x.row(j)).unwrap() > tau {
                c.set(i, j, 1.0);
            }
        }
    }
    let deg: Vec<f64> = (0..n).map(|i| c.row(i).iter().sum()).collect();
    for i in 0..n {
        for j in 0..n {
            let v = c.get(i, j) / (deg[i] * deg[j]).sqrt();
            c.set(i, j, v);
        }
    }
    let mut h = x.clone();
    for w in params.layers() {
        h = c.matmul(&h.matmul(w).unwrap()).unwrap().map(|z| 1.0 / (1.0 + (-z).exp()));
    }
    h
}

#[test]
fn gcn_matches_dense_oracle() {
    for seed in 0..5 {
        let g = random_graph(40, 0.1, 6, 3, seed);
        let tau = 0.3;
        let comp = compatibility_matrix(&g, tau);
        let params = GcnParams::init(6, 8, 2, &mut rng(seed + 100)).unwrap();
        let p = gcn_amplify(&g, &comp, &params).unwrap();
        let oracle = dense_gcn(&g, tau, &params);
        assert!(p.max_abs_diff(&oracle) < 1e-10);
        assert!(p.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn enriched_shape_and_degree_offset() {
    let g = random_graph(30, 0.15, 4, 2, 9);
    let comp = compatibility_matrix(&g, 0.5);
    let params = GcnParams::init(4, 8, 2, &mut rng(1)).unwrap();
    let p = gcn_amplify(&g, &comp, &params).unwrap();
    let nodes: Vec<usize> = (0..30).collect();
    let e = enrich(&g, &p, &nodes, false).unwrap();
    assert_eq!(e.x_final.shape(), (30, 12));
    for v in 0..30 {
        for j in 0..4 {
            assert_eq!(e.x_final.get(v, j), p.get(v, j) + g.degree(v) as f64);
            assert_eq!(e.x_final.get(v, 4 + j), g.features().get(v, j));
        }
        let k = nearest_class(g.features().row(v), &e.class_reps);
        assert_eq!(&e.x_final.row(v)[8..], e.class_reps.row(k));
    }
    let normed = enrich(&g, &p, &nodes, true).unwrap();
    let max_deg = (0..30).map(|v| g.degree(v)).max().unwrap() as f64;
    for v in 0..30 {
        let want = p.get(v, 0) + g.degree(v) as f64 / max_deg;
        assert!((normed.x_final.get(v, 0) - want).abs() < 1e-15);
    }
}

#[test]
fn class_reps_ignore_non_training_labels() {
    let g = random_graph(30, 0.1, 4, 3, 2);
    let train: Vec<usize> = (0..15).collect();
    let reps = class_representatives(&g, &train).unwrap();
    // Relabel and perturb every node outside the training set.
    let mut labels = g.labels().to_vec();
    let mut x = g.features().clone();
    for v in 15..30 {
        labels[v] = (labels[v] + 1) % 3;
        x.row_mut(v).iter_mut().for_each(|a| *a *= -7.0);
    }
    let h = Graph::new(30, g.edges().to_vec(), x, labels, 3).unwrap();
    assert_eq!(class_representatives(&h, &train).unwrap(), reps);
}

#[test]
fn missing_class_is_reported() {
    let g = path3();
    assert!(matches!(class_representatives(&g, &[0, 1]), Err(Error::EmptyClass { class: 1 })));
}

#[test]
fn nearest_class_ties_go_low() {
    let reps = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
    assert_eq!(nearest_class(&[1.0, 1.0], &reps), 0);
    assert_eq!(nearest_class(&[0.0, 2.0], &reps), 1);
}
