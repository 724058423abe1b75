//! Feature enrichment: GCN amplification over the compatibility graph,
//! degree offset, and nearest-class-centroid concatenation.
//!
//! The output `X_final = [X_deg ‖ X_sim]` is `n × 3d`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{cosine_unchecked, degree_vector, CompatibilityMatrix, Graph};
use crate::linalg::{glorot_uniform, Matrix};

/// Weights of the amplification GCN, one `d_in × d_out` matrix per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnParams {
    layers: Vec<Matrix>,
}

impl GcnParams {
    /// Checks that the widths chain and that the last layer returns to the
    /// input width `d`.
    pub fn new(layers: Vec<Matrix>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::InvalidParameter("GCN needs at least one layer".into()));
        };
        for pair in layers.windows(2) {
            if pair[0].cols() != pair[1].rows() {
                return Err(Error::Shape {
                    op: "gcn layer chain",
                    lhs: pair[0].shape(),
                    rhs: pair[1].shape(),
                });
            }
        }
        let last = layers.last().unwrap();
        if last.cols() != first.rows() {
            return Err(Error::Shape {
                op: "gcn output width",
                lhs: first.shape(),
                rhs: last.shape(),
            });
        }
        Ok(Self { layers })
    }

    /// Glorot-initialized `d → hidden → … → d` stack with `num_layers`
    /// weight matrices.
    pub fn init<R: Rng + ?Sized>(d: usize, hidden: usize, num_layers: usize, rng: &mut R) -> Result<Self> {
        if num_layers == 0 || d == 0 || hidden == 0 {
            return Err(Error::InvalidParameter(format!(
                "GCN needs positive sizes, got d={d} hidden={hidden} layers={num_layers}"
            )));
        }
        let layers = (0..num_layers)
            .map(|l| {
                let din = if l == 0 { d } else { hidden };
                let dout = if l + 1 == num_layers { d } else { hidden };
                glorot_uniform(din, dout, rng)
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Matrix] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].rows()
    }
}

#[inline]
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `H ← σ(Ĉ H W)` for every layer, starting from the raw features; returns
/// the last layer as `P`.
pub fn gcn_amplify(g: &Graph, comp: &CompatibilityMatrix, params: &GcnParams) -> Result<Matrix> {
    if comp.num_nodes() != g.num_nodes() {
        return Err(Error::InvalidParameter(format!(
            "compatibility matrix has {} nodes, graph has {}",
            comp.num_nodes(),
            g.num_nodes()
        )));
    }
    if params.input_dim() != g.feature_dim() {
        return Err(Error::Shape {
            op: "gcn_amplify",
            lhs: g.features().shape(),
            rhs: params.layers[0].shape(),
        });
    }
    let c_hat = comp.normalized();
    let mut h = g.features().clone();
    for w in &params.layers {
        h = c_hat.mul_dense(&h.matmul(w)?)?.map(logistic);
    }
    Ok(h)
}

/// `X_deg[i] = P[i] + deg(i)`, broadcast over columns.
pub fn connection_aware(p: &Matrix, deg: &[usize]) -> Result<Matrix> {
    let scores: Vec<f64> = deg.iter().map(|&d| d as f64).collect();
    offset_rows(p, &scores)
}

/// Like [`connection_aware`] with the degree divided by the maximum degree.
pub fn connection_aware_normalized(p: &Matrix, deg: &[usize]) -> Result<Matrix> {
    let max = deg.iter().copied().max().unwrap_or(0).max(1) as f64;
    let scores: Vec<f64> = deg.iter().map(|&d| d as f64 / max).collect();
    offset_rows(p, &scores)
}

fn offset_rows(p: &Matrix, scores: &[f64]) -> Result<Matrix> {
    if p.rows() != scores.len() {
        return Err(Error::Shape {
            op: "connection_aware",
            lhs: p.shape(),
            rhs: (scores.len(), 1),
        });
    }
    let mut out = p.clone();
    for (i, &s) in scores.iter().enumerate() {
        out.row_mut(i).iter_mut().for_each(|x| *x += s);
    }
    Ok(out)
}

/// Mean raw feature row of each class over the given nodes (`u × d`).
pub fn class_representatives(g: &Graph, nodes: &[usize]) -> Result<Matrix> {
    let (u, d) = (g.num_classes(), g.feature_dim());
    let mut reps = Matrix::zeros(u, d);
    let mut counts = vec![0usize; u];
    for &i in nodes {
        if i >= g.num_nodes() {
            return Err(Error::UnknownNode { id: i, n: g.num_nodes() });
        }
        let k = g.labels()[i];
        counts[k] += 1;
        for (r, x) in reps.row_mut(k).iter_mut().zip(g.features().row(i)) {
            *r += x;
        }
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass { class: k });
    }
    for (k, &c) in counts.iter().enumerate() {
        let inv = 1.0 / c as f64;
        reps.row_mut(k).iter_mut().for_each(|x| *x *= inv);
    }
    Ok(reps)
}

/// Index of the representative with the highest cosine to `x`; ties go to
/// the lowest index.
pub fn nearest_class(x: &[f64], reps: &Matrix) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, r) in reps.row_iter().enumerate() {
        let s = cosine_unchecked(x, r);
        if s > best.1 {
            best = (k, s);
        }
    }
    best.0
}

/// `X_sim[i] = [X[i] ‖ reps[k*]]` with `k*` from [`nearest_class`].
pub fn class_centric_concat(g: &Graph, reps: &Matrix) -> Result<Matrix> {
    let d = g.feature_dim();
    if reps.cols() != d || reps.rows() == 0 {
        return Err(Error::Shape {
            op: "class_centric_concat",
            lhs: g.features().shape(),
            rhs: reps.shape(),
        });
    }
    let mut out = Matrix::zeros(g.num_nodes(), 2 * d);
    for (i, x) in g.features().row_iter().enumerate() {
        let k = nearest_class(x, reps);
        let row = out.row_mut(i);
        row[..d].copy_from_slice(x);
        row[d..].copy_from_slice(reps.row(k));
    }
    Ok(out)
}

pub fn fuse(x_deg: &Matrix, x_sim: &Matrix) -> Result<Matrix> {
    x_deg.hcat(x_sim).map_err(|_| Error::Shape {
        op: "fuse",
        lhs: x_deg.shape(),
        rhs: x_sim.shape(),
    })
}

/// Which nodes contribute to the class representatives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassRepSource {
    #[default]
    Train,
    All,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnrichedFeatures {
    pub x_deg: Matrix,
    pub x_sim: Matrix,
    pub x_final: Matrix,
    pub class_reps: Matrix,
}

/// Runs the non-learned part of enrichment on a precomputed `P`.
pub fn enrich(g: &Graph, p: &Matrix, rep_nodes: &[usize], deg_norm: bool) -> Result<EnrichedFeatures> {
    let deg = degree_vector(g);
    let x_deg = if deg_norm {
        connection_aware_normalized(p, &deg)?
    } else {
        connection_aware(p, &deg)?
    };
    let class_reps = class_representatives(g, rep_nodes)?;
    let x_sim = class_centric_concat(g, &class_reps)?;
    let x_final = fuse(&x_deg, &x_sim)?;
    Ok(EnrichedFeatures {
        x_deg,
        x_sim,
        x_final,
        class_reps,
    })
}
