//! Undirected simple graphs with node features and labels, normalized
//! adjacencies, and the feature-compatibility graph.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{gemm, CsrMatrix, Matrix};

/// Immutable undirected simple graph.
///
/// Edges are stored once as `(u, v)` with `u < v`; self-loops and duplicate
/// (or reversed) pairs are dropped on construction.
#[derive(Clone, Debug)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    adjacency: Vec<usize>,
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Graph {
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if features.rows() != n {
            return Err(Error::InvalidGraph(format!(
                "feature matrix has {} rows for {n} nodes",
                features.rows()
            )));
        }
        if labels.len() != n {
            return Err(Error::InvalidGraph(format!(
                "{} labels for {n} nodes",
                labels.len()
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::InvalidGraph(format!(
                "node {i} has label {y}, expected < {num_classes}"
            )));
        }

        let mut clean = Vec::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if u != v {
                clean.push((u.min(v), u.max(v)));
            }
        }
        clean.sort_unstable();
        clean.dedup();

        let mut degree = vec![0usize; n];
        for &(u, v) in &clean {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n].to_vec();
        let mut adjacency = vec![0usize; 2 * clean.len()];
        for &(u, v) in &clean {
            adjacency[fill[u]] = v;
            fill[u] += 1;
            adjacency[fill[v]] = u;
            fill[v] += 1;
        }
        for v in 0..n {
            adjacency[offsets[v]..offsets[v + 1]].sort_unstable();
        }

        Ok(Self {
            n,
            edges: clean,
            offsets,
            adjacency,
            features,
            labels,
            num_classes,
        })
    }

    /// Same nodes, features and labels with a different edge set.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Self::new(
            self.n,
            edges,
            self.features.clone(),
            self.labels.clone(),
            self.num_classes,
        )
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Sorted neighbor ids of `v`.
    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
}

/// Number of neighbors of every node (row sums of `A`).
pub fn degree_vector(g: &Graph) -> Vec<usize> {
    (0..g.num_nodes()).map(|v| g.degree(v)).collect()
}

/// `D^{-1/2} (A + I) D^{-1/2}` with `D` the degree matrix of `A + I`.
pub fn sym_norm_adjacency(g: &Graph) -> CsrMatrix {
    let inv_sqrt: Vec<f64> = (0..g.num_nodes())
        .map(|v| 1.0 / ((g.degree(v) + 1) as f64).sqrt())
        .collect();
    let rows = (0..g.num_nodes())
        .map(|v| {
            let mut row: Vec<(usize, f64)> = g
                .neighbors(v)
                .iter()
                .map(|&u| (u, inv_sqrt[v] * inv_sqrt[u]))
                .collect();
            row.push((v, inv_sqrt[v] * inv_sqrt[v]));
            row
        })
        .collect();
    CsrMatrix::from_rows(g.num_nodes(), rows).expect("neighbor ids are in range")
}

/// Row-stochastic `D^{-1} (A + I)`.
pub fn rw_norm_adjacency(g: &Graph) -> CsrMatrix {
    let rows = (0..g.num_nodes())
        .map(|v| {
            let w = 1.0 / (g.degree(v) + 1) as f64;
            let mut row: Vec<(usize, f64)> = g.neighbors(v).iter().map(|&u| (u, w)).collect();
            row.push((v, w));
            row
        })
        .collect();
    CsrMatrix::from_rows(g.num_nodes(), rows).expect("neighbor ids are in range")
}

/// Cosine of the angle between `a` and `b`; zero when either is the zero
/// vector.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "cosine_similarity",
            lhs: (1, a.len()),
            rhs: (1, b.len()),
        });
    }
    Ok(cosine_unchecked(a, b))
}

pub(crate) fn cosine_unchecked(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Binary node-pair matrix marking feature-similar pairs, stored as sorted
/// neighbor lists `C(i)`. The diagonal is always empty.
#[derive(Clone, Debug, PartialEq)]
pub struct CompatibilityMatrix {
    tau: f64,
    neighbors: Vec<Vec<usize>>,
}

impl CompatibilityMatrix {
    /// Builds from explicit lists; symmetrizes and drops the diagonal.
    pub fn from_lists(tau: f64, lists: Vec<Vec<usize>>) -> Result<Self> {
        let n = lists.len();
        let mut neighbors = vec![Vec::new(); n];
        for (i, list) in lists.into_iter().enumerate() {
            for j in list {
                if j >= n {
                    return Err(Error::UnknownNode { id: j, n });
                }
                if i != j {
                    neighbors[i].push(j);
                    neighbors[j].push(i);
                }
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { tau, neighbors })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn num_nodes(&self) -> usize {
        self.neighbors.len()
    }

    /// `C(i)`, sorted.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    pub fn num_pairs(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Aggregation degree `|C(i)| + 1` (self included).
    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len() + 1
    }

    /// Entries `1/√(d_i d_j)` over `C(i) ∪ {i}`; the propagation matrix of
    /// the amplification GCN.
    pub fn normalized(&self) -> CsrMatrix {
        let inv_sqrt: Vec<f64> = (0..self.num_nodes())
            .map(|i| 1.0 / (self.degree(i) as f64).sqrt())
            .collect();
        let rows = self
            .neighbors
            .iter()
            .enumerate()
            .map(|(i, list)| {
                let mut row: Vec<(usize, f64)> =
                    list.iter().map(|&j| (j, inv_sqrt[i] * inv_sqrt[j])).collect();
                row.push((i, inv_sqrt[i] * inv_sqrt[i]));
                row
            })
            .collect();
        CsrMatrix::from_rows(self.num_nodes(), rows).expect("ids checked on construction")
    }
}

const COMPAT_BLOCK: usize = 256;
// Gram entries this close to tau are re-decided with the exact cosine.
const COMPAT_RECHECK: f64 = 1e-9;

/// `C(i) = { j ≠ i : cos(X[i], X[j]) > tau }`.
///
/// Cosines come from a blocked Gram product of the row-normalized features;
/// pairs within `1e-9` of the threshold are recomputed directly so the
/// result agrees with [`cosine_similarity`].
pub fn compatibility_matrix(g: &Graph, tau: f64) -> CompatibilityMatrix {
    let x = g.features();
    let n = x.rows();
    let mut unit = x.clone();
    for i in 0..n {
        let row = unit.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }

    let starts: Vec<usize> = (0..n).step_by(COMPAT_BLOCK).collect();
    let upper: Vec<Vec<(usize, usize)>> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + COMPAT_BLOCK).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let block = unit.select_rows(&idx);
            let mut gram = Matrix::zeros(end - start, n);
            gemm(1.0, &block, false, &unit, true, 0.0, &mut gram);
            let mut pairs = Vec::new();
            for (r, i) in (start..end).enumerate() {
                let row = gram.row(r);
                for j in i + 1..n {
                    let s = row[j];
                    let hit = if (s - tau).abs() < COMPAT_RECHECK {
                        cosine_unchecked(x.row(i), x.row(j)) > tau
                    } else {
                        s > tau
                    };
                    if hit {
                        pairs.push((i, j));
                    }
                }
            }
            pairs
        })
        .collect();

    let mut neighbors = vec![Vec::new(); n];
    for (i, j) in upper.into_iter().flatten() {
        neighbors[i].push(j);
        neighbors[j].push(i);
    }
    for list in &mut neighbors {
        list.sort_unstable();
    }
    CompatibilityMatrix { tau, neighbors }
}
