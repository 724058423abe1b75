//! Personalized-PageRank sampling matrix and subgraph-sequence sampling.
//!
//! Row `v` of the sampling matrix solves `r = c·e_v + (1−c)·Â·r` with `Â`
//! the symmetrically normalized adjacency. Because `Â` is not
//! column-stochastic that solution does not sum to one on irregular
//! graphs; [`ppr_fixed_point`] returns it as is, while [`ppr_row`] and
//! [`SamplingMatrix`] rescale it to unit mass. Sampling only depends on
//! score ratios, so the rescaling changes nothing downstream.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{sym_norm_adjacency, Graph};
use crate::linalg::{CsrMatrix, Matrix};
use crate::rng::{stream, Domain};

/// Power iteration stops once the L1 change of an iterate drops below this.
pub const PPR_TOLERANCE: f64 = 1e-11;
pub const PPR_MAX_ITER: usize = 1000;

fn check_damping(c: f64) -> Result<()> {
    if c > 0.0 && c <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("damping factor c = {c} is outside (0, 1]")))
    }
}

/// Fixed point of `r ← c·e_v + (1−c)·Â·r` by power iteration.
pub fn ppr_fixed_point(a_hat: &CsrMatrix, v: usize, c: f64) -> Result<Vec<f64>> {
    check_damping(c)?;
    let n = a_hat.rows();
    if v >= n {
        return Err(Error::UnknownNode { id: v, n });
    }
    let mut r = vec![0.0; n];
    r[v] = c;
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..PPR_MAX_ITER {
        a_hat.mul_vec(&r, &mut next);
        residual = 0.0;
        for (i, x) in next.iter_mut().enumerate() {
            *x *= 1.0 - c;
            if i == v {
                *x += c;
            }
            residual += (*x - r[i]).abs();
        }
        std::mem::swap(&mut r, &mut next);
        if residual < PPR_TOLERANCE {
            return Ok(r);
        }
    }
    Err(Error::NoConvergence {
        iterations: PPR_MAX_ITER,
        residual,
    })
}

/// [`ppr_fixed_point`] rescaled to sum to one.
pub fn ppr_row(a_hat: &CsrMatrix, v: usize, c: f64) -> Result<Vec<f64>> {
    let mut r = ppr_fixed_point(a_hat, v, c)?;
    let mass: f64 = r.iter().sum();
    r.iter_mut().for_each(|x| *x /= mass);
    Ok(r)
}

/// Dense solve of `(I − (1−c)Â) R = c·I`; row `v` of the result is the
/// unnormalized PPR vector of `v`. Meant for small graphs and tests.
pub fn ppr_dense(a_hat: &CsrMatrix, c: f64) -> Result<Matrix> {
    check_damping(c)?;
    let n = a_hat.rows();
    let mut m = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        let (idx, vals) = a_hat.row(i);
        for (&j, &a) in idx.iter().zip(vals) {
            m[(i, j)] -= (1.0 - c) * a;
        }
    }
    let rhs = DMatrix::<f64>::identity(n, n) * c;
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidParameter("singular PPR system".into()))?;
    // Column v of the solution is r_v.
    let mut out = Matrix::zeros(n, n);
    for v in 0..n {
        for i in 0..n {
            out.set(v, i, sol[(i, v)]);
        }
    }
    Ok(out)
}

/// Row-per-node PPR scores, each row rescaled to unit mass.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMatrix {
    c: f64,
    scores: Matrix,
    mass: Vec<f64>,
}

impl SamplingMatrix {
    pub fn damping(&self) -> f64 {
        self.c
    }

    pub fn num_nodes(&self) -> usize {
        self.scores.rows()
    }

    pub fn row(&self, v: usize) -> &[f64] {
        self.scores.row(v)
    }

    pub fn scores(&self) -> &Matrix {
        &self.scores
    }

    /// Sum of the unnormalized fixed point for each row.
    pub fn raw_mass(&self) -> &[f64] {
        &self.mass
    }
}

pub fn sampling_matrix(g: &Graph, c: f64) -> Result<SamplingMatrix> {
    check_damping(c)?;
    let a_hat = sym_norm_adjacency(g);
    let n = g.num_nodes();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|v| ppr_fixed_point(&a_hat, v, c))
        .collect::<Result<_>>()?;
    let mut scores = Matrix::zeros(n, n);
    let mut mass = Vec::with_capacity(n);
    for (v, r) in rows.into_iter().enumerate() {
        let m: f64 = r.iter().sum();
        for (o, x) in scores.row_mut(v).iter_mut().zip(r) {
            *o = x / m;
        }
        mass.push(m);
    }
    Ok(SamplingMatrix { c, scores, mass })
}

/// `k1 + 1` node ids with the target first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgraphSequence {
    pub target: usize,
    pub nodes: Vec<usize>,
}

impl SubgraphSequence {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// The `k1` highest-scoring ids other than `v`; ties go to the lower id.
pub fn top_neighbors(row: &[f64], v: usize, k1: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..row.len()).filter(|&i| i != v).collect();
    let by_score = |a: &usize, b: &usize| row[*b].total_cmp(&row[*a]).then(a.cmp(b));
    if k1 < ids.len() {
        ids.select_nth_unstable_by(k1, by_score);
        ids.truncate(k1);
    }
    ids.sort_by(by_score);
    ids
}

/// Draws `r` distinct indices with successive probabilities proportional
/// to `weights` (Efraimidis–Spirakis keys), in draw order. Zero weights are
/// never drawn; `r` must not exceed the number of positive weights.
pub fn weighted_without_replacement<R: Rng + ?Sized>(weights: &[f64], r: usize, rng: &mut R) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(i, &w)| {
            let u: f64 = 1.0 - rng.random::<f64>();
            (u.ln() / w, i)
        })
        .collect();
    debug_assert!(r <= keyed.len());
    let by_key = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if r < keyed.len() {
        keyed.select_nth_unstable_by(r, by_key);
        keyed.truncate(r);
    }
    keyed.sort_by(by_key);
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// `q` sequences for every node; node `v` draws from its own stream of
/// `seed`, so the output does not depend on scheduling.
pub fn sample_subgraphs(s: &SamplingMatrix, k1: usize, q: usize, seed: u64) -> Result<Vec<Vec<SubgraphSequence>>> {
    let n = s.num_nodes();
    if k1 >= n {
        return Err(Error::InvalidParameter(format!(
            "subgraph size k1 = {k1} must be below the node count {n}"
        )));
    }
    if q == 0 {
        return Err(Error::InvalidParameter("q must be at least 1".into()));
    }
    Ok((0..n)
        .into_par_iter()
        .map(|v| sample_node(s.row(v), v, k1, q, seed))
        .collect())
}

fn sample_node(row: &[f64], v: usize, k1: usize, q: usize, seed: u64) -> Vec<SubgraphSequence> {
    let mut rng = stream(seed, Domain::Sampling, v as u64);
    let top = top_neighbors(row, v, k1);
    let weights: Vec<f64> = row
        .iter()
        .enumerate()
        .map(|(i, &x)| if i == v { 0.0 } else { x.max(0.0) })
        .collect();
    let positive = weights.iter().filter(|&&w| w > 0.0).count();
    let r = positive.min(k1);
    let mut used = vec![false; row.len()];
    (0..q)
        .map(|_| {
            let mut nodes = Vec::with_capacity(k1 + 1);
            nodes.push(v);
            nodes.extend(weighted_without_replacement(&weights, r, &mut rng));
            used.iter_mut().for_each(|u| *u = false);
            for &i in &nodes {
                used[i] = true;
            }
            let mut pool: Vec<usize> = top.iter().copied().filter(|&i| !used[i]).collect();
            pool.shuffle(&mut rng);
            let need = k1 + 1 - nodes.len();
            nodes.extend(pool.into_iter().take(need));
            // `top` already holds the k1 best ids, so this only triggers on
            // degenerate inputs.
            if nodes.len() < k1 + 1 {
                for &i in &nodes {
                    used[i] = true;
                }
                let extra = top_neighbors(row, v, row.len() - 1);
                nodes.extend(extra.into_iter().filter(|&i| !used[i]).take(k1 + 1 - nodes.len()));
            }
            nodes.resize(k1 + 1, v);
            SubgraphSequence { target: v, nodes }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::{path3, random_graph};

    fn cycle(n: usize) -> Graph {
        Graph::new(n, (0..n).map(|i| (i, (i + 1) % n)), Matrix::zeros(n, 1), vec![0; n], 1).unwrap()
    }

    #[test]
    fn c_one_is_indicator() {
        let a = sym_norm_adjacency(&path3());
        assert_eq!(ppr_fixed_point(&a, 1, 1.0).unwrap(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn single_node() {
        let g = Graph::new(1, [], Matrix::zeros(1, 1), vec![0], 1).unwrap();
        let r = ppr_row(&sym_norm_adjacency(&g), 0, 0.15).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn bad_damping() {
        let a = sym_norm_adjacency(&path3());
        assert!(ppr_fixed_point(&a, 0, 0.0).is_err());
        assert!(ppr_fixed_point(&a, 0, 1.5).is_err());
        assert!(ppr_fixed_point(&a, 5, 0.5).is_err());
    }

    #[test]
    fn path_matches_dense() {
        let a = sym_norm_adjacency(&path3());
        let dense = ppr_dense(&a, 0.15).unwrap();
        let r = ppr_fixed_point(&a, 0, 0.15).unwrap();
        for i in 0..3 {
            assert!((r[i] - dense.get(0, i)).abs() < 1e-8);
        }
    }

    #[test]
    fn edgeless_is_identity() {
        let g = Graph::new(4, [], Matrix::zeros(4, 1), vec![0; 4], 1).unwrap();
        let s = sampling_matrix(&g, 0.3).unwrap();
        assert_eq!(s.scores(), &Matrix::identity(4));
    }

    #[test]
    fn rows_have_unit_mass() {
        let s = sampling_matrix(&random_graph(300, 0.02, 1, 4), 0.15).unwrap();
        for v in 0..300 {
            let row = s.row(v);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-7);
            assert!(row.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn cycle_is_circulant() {
        let s = sampling_matrix(&cycle(6), 0.15).unwrap();
        for v in 0..6 {
            for i in 0..6 {
                assert!((s.row(v)[(i + v) % 6] - s.row(0)[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn path_sequence_is_permutation() {
        let s = sampling_matrix(&path3(), 0.15).unwrap();
        let seqs = sample_subgraphs(&s, 2, 1, 3).unwrap();
        let mut nodes = seqs[1][0].nodes.clone();
        assert_eq!(nodes[0], 1);
        nodes.sort();
        assert_eq!(nodes, vec![0, 1, 2]);
    }

    #[test]
    fn k1_zero_and_limits() {
        let s = sampling_matrix(&path3(), 0.15).unwrap();
        let seqs = sample_subgraphs(&s, 0, 2, 3).unwrap();
        assert!(seqs.iter().enumerate().all(|(v, q)| q.iter().all(|s| s.nodes == vec![v])));
        assert!(sample_subgraphs(&s, 3, 1, 0).is_err());
        assert!(sample_subgraphs(&s, 1, 0, 0).is_err());
    }

    #[test]
    fn sequences_are_valid_and_reproducible() {
        let s = sampling_matrix(&random_graph(80, 0.05, 1, 2), 0.15).unwrap();
        let a = sample_subgraphs(&s, 15, 5, 11).unwrap();
        assert_eq!(a, sample_subgraphs(&s, 15, 5, 11).unwrap());
        assert_ne!(a, sample_subgraphs(&s, 15, 5, 12).unwrap());
        for (v, seqs) in a.iter().enumerate() {
            assert_eq!(seqs.len(), 5);
            for seq in seqs {
                assert_eq!(seq.nodes.len(), 16);
                assert_eq!(seq.nodes[0], v);
                let mut d = seq.nodes.clone();
                d.sort();
                d.dedup();
                assert_eq!(d.len(), 16);
            }
        }
    }

    #[test]
    fn disconnected_target_fills_from_top() {
        // Node 3 is isolated: no positive off-target scores, so every slot is
        // filled from its top neighbors (all zero-score).
        let g = Graph::new(4, [(0, 1), (1, 2)], Matrix::zeros(4, 1), vec![0; 4], 1).unwrap();
        let s = sampling_matrix(&g, 0.15).unwrap();
        let seqs = sample_subgraphs(&s, 2, 3, 0).unwrap();
        for seq in &seqs[3] {
            assert_eq!(seq.nodes[0], 3);
            assert_eq!(seq.nodes.len(), 3);
            assert!(seq.nodes[1..].iter().all(|&i| i < 3));
            assert_ne!(seq.nodes[1], seq.nodes[2]);
        }
    }

    #[test]
    fn top_neighbors_tie_break() {
        assert_eq!(top_neighbors(&[0.5, 0.2, 0.2, 0.9], 3, 2), vec![0, 1]);
        assert_eq!(top_neighbors(&[0.5, 0.2, 0.2, 0.9], 0, 3), vec![3, 1, 2]);
    }
}
