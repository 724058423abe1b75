//! Stochastic block model graphs with class-shifted Gaussian features.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::Matrix;
use crate::rng::{stream, Domain};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub nodes: usize,
    pub blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Mean offset added to the block's own feature coordinates.
    pub shift: f64,
    pub noise: f64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            nodes: 200,
            blocks: 2,
            p_in: 0.1,
            p_out: 0.01,
            feature_dim: 16,
            shift: 1.5,
            noise: 1.0,
        }
    }
}

/// Node `v` belongs to block `v % blocks`. Features are `N(μ_k, noise²·I)`
/// where `μ_k` is `shift` on the coordinates `j` with `j % blocks == k`
/// and zero elsewhere.
pub fn sbm(cfg: &SbmConfig, seed: u64) -> Result<Graph> {
    if cfg.blocks == 0 || cfg.nodes < cfg.blocks {
        return Err(Error::InvalidParameter(format!(
            "{} nodes cannot fill {} blocks",
            cfg.nodes, cfg.blocks
        )));
    }
    for p in [cfg.p_in, cfg.p_out] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("edge probability {p} outside [0, 1]")));
        }
    }
    let normal = Normal::new(0.0, cfg.noise)
        .map_err(|e| Error::InvalidParameter(format!("feature noise: {e}")))?;
    let mut rng = stream(seed, Domain::Synthetic, 0);
    let labels: Vec<usize> = (0..cfg.nodes).map(|v| v % cfg.blocks).collect();
    let mut edges = Vec::new();
    for u in 0..cfg.nodes {
        for v in u + 1..cfg.nodes {
            let p = if labels[u] == labels[v] { cfg.p_in } else { cfg.p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let mut features = Matrix::zeros(cfg.nodes, cfg.feature_dim);
    for (v, &k) in labels.iter().enumerate() {
        for (j, x) in features.row_mut(v).iter_mut().enumerate() {
            let mean = if j % cfg.blocks == k { cfg.shift } else { 0.0 };
            *x = mean + normal.sample(&mut rng);
        }
    }
    Graph::new(cfg.nodes, edges, features, labels, cfg.blocks)
}
