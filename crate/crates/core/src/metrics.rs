//! Dataset-level structural statistics: average degree, clustering,
//! triangles, PageRank and edge homophily.

use serde::{Deserialize, Serialize};

use crate::graph::Graph;

pub const PAGERANK_DAMPING: f64 = 0.85;
pub const PAGERANK_TOLERANCE: f64 = 1e-10;
const PAGERANK_MAX_ITER: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub avg_degree: f64,
    /// Mean local clustering coefficient; nodes of degree < 2 count as 0.
    pub clustering: f64,
    /// `3T / n` for `T` triangles, i.e. the mean per-node triangle count.
    pub triangles_per_node: f64,
    pub mean_pagerank: f64,
    /// Fraction of edges whose endpoints share a label.
    pub homophily: f64,
}

pub fn dataset_metrics(g: &Graph) -> DatasetMetrics {
    let n = g.num_nodes();
    if n == 0 {
        return DatasetMetrics {
            avg_degree: 0.0,
            clustering: 0.0,
            triangles_per_node: 0.0,
            mean_pagerank: 0.0,
            homophily: 0.0,
        };
    }
    let tri = local_triangles(g);
    let clustering = tri
        .iter()
        .enumerate()
        .map(|(v, &t)| {
            let d = g.degree(v);
            if d < 2 {
                0.0
            } else {
                2.0 * t as f64 / (d * (d - 1)) as f64
            }
        })
        .sum::<f64>()
        / n as f64;
    let pr = pagerank(g, PAGERANK_DAMPING, PAGERANK_TOLERANCE);
    DatasetMetrics {
        avg_degree: 2.0 * g.num_edges() as f64 / n as f64,
        clustering,
        triangles_per_node: tri.iter().sum::<usize>() as f64 / n as f64,
        mean_pagerank: pr.iter().sum::<f64>() / n as f64,
        homophily: edge_homophily(g),
    }
}

/// Number of triangles through each node.
pub fn local_triangles(g: &Graph) -> Vec<usize> {
    let n = g.num_nodes();
    let mut counts = vec![0usize; n];
    // Each triangle u < v < w is found once from its lowest edge (u, v).
    for &(u, v) in g.edges() {
        let (a, b) = (g.neighbors(u), g.neighbors(v));
        let (mut i, mut j) = (a.partition_point(|&x| x <= v), b.partition_point(|&x| x <= v));
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    counts[u] += 1;
                    counts[v] += 1;
                    counts[a[i]] += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
    }
    counts
}

pub fn triangle_count(g: &Graph) -> usize {
    local_triangles(g).iter().sum::<usize>() / 3
}

/// Fraction of edges joining same-label endpoints; 1 for an edgeless graph.
pub fn edge_homophily(g: &Graph) -> f64 {
    if g.num_edges() == 0 {
        return 1.0;
    }
    let y = g.labels();
    let same = g.edges().iter().filter(|&&(u, v)| y[u] == y[v]).count();
    same as f64 / g.num_edges() as f64
}

/// Standard PageRank with uniform teleport; dangling mass is spread
/// uniformly. Iterates until the L1 change drops below `tol`.
pub fn pagerank(g: &Graph, damping: f64, tol: f64) -> Vec<f64> {
    let n = g.num_nodes();
    if n == 0 {
        return Vec::new();
    }
    let uniform = 1.0 / n as f64;
    let mut rank = vec![uniform; n];
    let mut next = vec![0.0; n];
    for _ in 0..PAGERANK_MAX_ITER {
        let dangling: f64 = (0..n).filter(|&v| g.degree(v) == 0).map(|v| rank[v]).sum();
        let base = (1.0 - damping) * uniform + damping * dangling * uniform;
        next.iter_mut().for_each(|x| *x = base);
        for v in 0..n {
            let d = g.degree(v);
            if d > 0 {
                let share = damping * rank[v] / d as f64;
                for &u in g.neighbors(v) {
                    next[u] += share;
                }
            }
        }
        let delta: f64 = rank.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut rank, &mut next);
        if delta < tol {
            break;
        }
    }
    rank
}
