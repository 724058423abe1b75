//! Structure-aware graph transformer over sampled node sequences.
//!
//! Tokens are projected rows of the enriched feature matrix. Every block is
//! post-norm: `H ← LN(H + Drop(MHA(H)))`, then `H ← LN(H + Drop(FFN(H)))`.
//! Attention logits of head `h` get the bias
//! `ψ_h[i, j] = Σ_m w[h, m] · α_m(v_i, v_j)`, where `α_m` reads the `m`-th
//! power of the random-walk adjacency and the last order is always zero.
//! The mixing weights `w` are shared by all layers and start at zero. The
//! target token (position 0) is the readout.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BiasTables, Mode, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{rw_norm_adjacency, Graph};
use crate::linalg::{glorot_uniform, CsrMatrix, Matrix};
use crate::rng::{stream, Domain};
use crate::sampler::SubgraphSequence;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Nodes per forward pass during batched evaluation.
const EVAL_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    /// Number of structural encoding orders `M`.
    pub orders: usize,
    pub k1: usize,
    pub q: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            layers: 3,
            heads: 4,
            dropout: 0.3,
            orders: 4,
            k1: 15,
            q: 5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.hidden == 0 || self.layers == 0 || self.heads == 0 || self.orders == 0 || self.q == 0 {
            return bad(format!("model sizes must be positive: {self:?}"));
        }
        if self.hidden % self.heads != 0 {
            return bad(format!("{} heads do not divide hidden width {}", self.heads, self.hidden));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Powers `Ã^0 … Ã^{M−2}` of the row-stochastic adjacency, kept sparse.
#[derive(Clone, Debug)]
pub struct StructuralEncoding {
    orders: usize,
    powers: Vec<CsrMatrix>,
}

impl StructuralEncoding {
    pub fn new(g: &Graph, orders: usize) -> Result<Self> {
        if orders == 0 {
            return Err(Error::InvalidParameter("need at least one encoding order".into()));
        }
        let n = g.num_nodes();
        let a = rw_norm_adjacency(g);
        let identity = CsrMatrix::from_rows(n, (0..n).map(|i| vec![(i, 1.0)]).collect())?;
        let mut powers = Vec::with_capacity(orders - 1);
        if orders > 1 {
            powers.push(identity);
        }
        while powers.len() + 1 < orders {
            let next = powers.last().unwrap().mul_sparse(&a)?;
            powers.push(next);
        }
        Ok(Self { orders, powers })
    }

    pub fn orders(&self) -> usize {
        self.orders
    }

    pub fn num_nodes(&self) -> Option<usize> {
        self.powers.first().map(CsrMatrix::rows)
    }

    pub fn power(&self, m: usize) -> Option<&CsrMatrix> {
        self.powers.get(m)
    }

    /// `α_m(u, v)`: `Ã^m[u, v]` below the last order, zero at it.
    pub fn alpha(&self, m: usize, u: usize, v: usize) -> f64 {
        self.powers.get(m).map_or(0.0, |p| p.get(u, v))
    }

    /// Encoding tables for equal-length sequences.
    pub fn tables(&self, seqs: &[&[usize]]) -> BiasTables {
        let len = seqs.first().map_or(0, |s| s.len());
        let mut alphas = vec![0.0; seqs.len() * self.orders * len * len];
        for (b, seq) in seqs.iter().enumerate() {
            for (m, p) in self.powers.iter().enumerate() {
                let off = (b * self.orders + m) * len * len;
                for (i, &u) in seq.iter().enumerate() {
                    for (j, &v) in seq.iter().enumerate() {
                        alphas[off + i * len + j] = p.get(u, v);
                    }
                }
            }
        }
        BiasTables {
            batch: seqs.len(),
            orders: self.orders,
            len,
            alphas,
        }
    }

    /// `ψ_h` for one sequence given the mixing weights of head `h`.
    pub fn bias(&self, weights: &[f64], seq: &[usize]) -> Matrix {
        let len = seq.len();
        let mut out = Matrix::zeros(len, len);
        for (i, &u) in seq.iter().enumerate() {
            for (j, &v) in seq.iter().enumerate() {
                let s = weights
                    .iter()
                    .enumerate()
                    .map(|(m, w)| w * self.alpha(m, u, v))
                    .sum();
                out.set(i, j, s);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    input_dim: usize,
    num_classes: usize,
    pub store: ParamStore,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    /// `heads × M` structural mixing weights.
    pub mix: ParamId,
    pub layers: Vec<LayerParams>,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

impl ModelParams {
    /// Glorot weights, zero biases and mixing weights, unit norm scales.
    pub fn init(config: &ModelConfig, input_dim: usize, num_classes: usize, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, Domain::ModelInit, 0);
        Self::build(config, input_dim, num_classes, |name, rows, cols| {
            Ok(if name.ends_with(".w") || name.ends_with(".w1") || name.ends_with(".w2") {
                glorot_uniform(rows, cols, &mut rng)
            } else if name.ends_with(".gamma") {
                Matrix::filled(rows, cols, 1.0)
            } else {
                Matrix::zeros(rows, cols)
            })
        })
    }

    fn build(
        config: &ModelConfig,
        input_dim: usize,
        num_classes: usize,
        mut make: impl FnMut(&str, usize, usize) -> Result<Matrix>,
    ) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 || num_classes == 0 {
            return Err(Error::InvalidParameter(format!(
                "input width {input_dim} and class count {num_classes} must be positive"
            )));
        }
        let h = config.hidden;
        let mut store = ParamStore::new();
        let mut add = |name: String, rows, cols| -> Result<ParamId> {
            let m = make(&name, rows, cols)?;
            Ok(store.add(name, m))
        };
        let proj_w = add("proj.w".into(), input_dim, h)?;
        let proj_b = add("proj.b".into(), 1, h)?;
        let mix = add("mix".into(), config.heads, config.orders)?;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = |s: &str| format!("layer{l}.{s}");
            layers.push(LayerParams {
                wq: add(p("q.w"), h, h)?,
                wk: add(p("k.w"), h, h)?,
                wv: add(p("v.w"), h, h)?,
                wo: add(p("o.w"), h, h)?,
                w1: add(p("ffn.w1"), h, h)?,
                b1: add(p("ffn.b1"), 1, h)?,
                w2: add(p("ffn.w2"), h, h)?,
                b2: add(p("ffn.b2"), 1, h)?,
                ln1_gamma: add(p("ln1.gamma"), 1, h)?,
                ln1_beta: add(p("ln1.beta"), 1, h)?,
                ln2_gamma: add(p("ln2.gamma"), 1, h)?,
                ln2_beta: add(p("ln2.beta"), 1, h)?,
            });
        }
        let out_w = add("out.w".into(), h, num_classes)?;
        let out_b = add("out.b".into(), 1, num_classes)?;
        Ok(Self {
            config: config.clone(),
            input_dim,
            num_classes,
            store,
            proj_w,
            proj_b,
            mix,
            layers,
            out_w,
            out_b,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// `X W + b` for every row of `x`.
    pub fn project_all(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.matmul(self.store.get(self.proj_w))?;
        let b = self.store.get(self.proj_b).row(0).to_vec();
        for i in 0..out.rows() {
            out.row_mut(i).iter_mut().zip(&b).for_each(|(o, b)| *o += b);
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            input_dim: self.input_dim,
            num_classes: self.num_classes,
            tensors: self
                .store
                .iter()
                .map(|(_, name, m)| TensorRecord {
                    name: name.to_string(),
                    rows: m.rows(),
                    cols: m.cols(),
                    data: m.as_slice().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        let by_name: HashMap<&str, &TensorRecord> = ck.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let params = Self::build(&ck.config, ck.input_dim, ck.num_classes, |name, rows, cols| {
            let t = by_name
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if (t.rows, t.cols) != (rows, cols) {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` is {}x{}, expected {rows}x{cols}",
                    t.rows, t.cols
                )));
            }
            Matrix::from_vec(rows, cols, t.data.clone())
                .map_err(|_| Error::Checkpoint(format!("tensor `{name}` has the wrong element count")))
        })?;
        if params.store.len() != ck.tensors.len() {
            return Err(Error::Checkpoint("unexpected extra tensors".into()));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_checkpoint(&ck)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// On-disk form of [`ModelParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub input_dim: usize,
    pub num_classes: usize,
    pub tensors: Vec<TensorRecord>,
}

/// Token source for [`forward_batch`].
#[derive(Clone, Copy, Debug)]
pub enum Input<'a> {
    /// Enriched features; the projection is recorded on the tape.
    Raw(&'a Matrix),
    /// Output of [`ModelParams::project_all`]; treated as constant.
    Projected(&'a Matrix),
}

impl Input<'_> {
    fn rows(&self) -> usize {
        match self {
            Input::Raw(m) | Input::Projected(m) => m.rows(),
        }
    }
}

pub struct ForwardOutput {
    /// `batch × u`.
    pub logits: Var,
    /// Final-layer target tokens, `batch × hidden`.
    pub readout: Var,
    pub bias: Var,
    /// One attention node per layer.
    pub attention: Vec<Var>,
}

/// Structure-aware multi-head attention followed by the output mix and
/// dropout. `h` is `(batch·len) × hidden`.
pub fn sa_mha(tape: &mut Tape, params: &ModelParams, layer: &LayerParams, h: Var, bias: Var, len: usize) -> Result<(Var, Var)> {
    let s = &params.store;
    let (wq, wk, wv, wo) = (
        tape.param(s, layer.wq),
        tape.param(s, layer.wk),
        tape.param(s, layer.wv),
        tape.param(s, layer.wo),
    );
    let q = tape.matmul(h, wq)?;
    let k = tape.matmul(h, wk)?;
    let v = tape.matmul(h, wv)?;
    let att = tape.attention(q, k, v, Some(bias), params.config.heads, len)?;
    let mixed = tape.matmul(att, wo)?;
    Ok((tape.dropout(mixed, params.config.dropout)?, att))
}

/// One post-norm block; returns the block output and its attention node.
pub fn transformer_block(
    tape: &mut Tape,
    params: &ModelParams,
    layer: &LayerParams,
    h: Var,
    bias: Var,
    len: usize,
) -> Result<(Var, Var)> {
    let s = &params.store;
    let (a, att) = sa_mha(tape, params, layer, h, bias, len)?;
    let r1 = tape.add(h, a)?;
    let (g1, b1n) = (tape.param(s, layer.ln1_gamma), tape.param(s, layer.ln1_beta));
    let h1 = tape.layer_norm(r1, g1, b1n)?;

    let (w1, b1, w2, b2) = (
        tape.param(s, layer.w1),
        tape.param(s, layer.b1),
        tape.param(s, layer.w2),
        tape.param(s, layer.b2),
    );
    let f = tape.matmul(h1, w1)?;
    let f = tape.add(f, b1)?;
    let f = tape.gelu(f);
    let f = tape.matmul(f, w2)?;
    let f = tape.add(f, b2)?;
    let f = tape.dropout(f, params.config.dropout)?;
    let r2 = tape.add(h1, f)?;
    let (g2, b2n) = (tape.param(s, layer.ln2_gamma), tape.param(s, layer.ln2_beta));
    Ok((tape.layer_norm(r2, g2, b2n)?, att))
}

/// Runs equal-length sequences through the model as one batch.
pub fn forward_batch(
    tape: &mut Tape,
    params: &ModelParams,
    enc: &StructuralEncoding,
    input: Input<'_>,
    seqs: &[&[usize]],
) -> Result<ForwardOutput> {
    let Some(first) = seqs.first() else {
        return Err(Error::InvalidParameter("empty batch".into()));
    };
    let len = first.len();
    if len == 0 || seqs.iter().any(|s| s.len() != len) {
        return Err(Error::InvalidParameter("sequences in a batch must share a positive length".into()));
    }
    if enc.orders() != params.config.orders {
        return Err(Error::InvalidParameter(format!(
            "encoding has {} orders, model expects {}",
            enc.orders(),
            params.config.orders
        )));
    }
    let n = input.rows();
    let limit = enc.num_nodes().map_or(n, |m| m.min(n));
    let tokens: Vec<usize> = seqs.iter().flat_map(|s| s.iter().copied()).collect();
    if let Some(&bad) = tokens.iter().find(|&&t| t >= limit) {
        return Err(Error::UnknownNode { id: bad, n: limit });
    }

    let s = &params.store;
    let mut h = match input {
        Input::Raw(x) => {
            if x.cols() != params.input_dim {
                return Err(Error::Shape {
                    op: "input projection",
                    lhs: x.shape(),
                    rhs: s.get(params.proj_w).shape(),
                });
            }
            let mut unique = tokens.clone();
            unique.sort_unstable();
            unique.dedup();
            let pos: HashMap<usize, usize> = unique.iter().enumerate().map(|(i, &t)| (t, i)).collect();
            let xu = tape.constant(x.select_rows(&unique));
            let (w, b) = (tape.param(s, params.proj_w), tape.param(s, params.proj_b));
            let hu = tape.matmul(xu, w)?;
            let hu = tape.add(hu, b)?;
            let idx: Vec<usize> = tokens.iter().map(|t| pos[t]).collect();
            tape.gather_rows(hu, &idx)?
        }
        Input::Projected(p) => {
            if p.cols() != params.config.hidden {
                return Err(Error::Shape {
                    op: "projected input",
                    lhs: p.shape(),
                    rhs: (n, params.config.hidden),
                });
            }
            tape.constant(p.select_rows(&tokens))
        }
    };

    let mix = tape.param(s, params.mix);
    let bias = tape.mix_bias(mix, Arc::new(enc.tables(seqs)))?;
    let mut attention = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (out, att) = transformer_block(tape, params, layer, h, bias, len)?;
        h = out;
        attention.push(att);
    }
    let heads: Vec<usize> = (0..seqs.len()).map(|b| b * len).collect();
    let readout = tape.gather_rows(h, &heads)?;
    let (w, b) = (tape.param(s, params.out_w), tape.param(s, params.out_b));
    let logits = tape.matmul(readout, w)?;
    let logits = tape.add(logits, b)?;
    Ok(ForwardOutput {
        logits,
        readout,
        bias,
        attention,
    })
}

/// Logits of a single sequence.
pub fn forward(params: &ModelParams, enc: &StructuralEncoding, x_final: &Matrix, seq: &[usize], mode: Mode) -> Result<Vec<f64>> {
    let mut tape = Tape::new(mode);
    let out = forward_batch(&mut tape, params, enc, Input::Raw(x_final), &[seq])?;
    Ok(tape.value(out.logits).row(0).to_vec())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut p = logits.to_vec();
    crate::autodiff::softmax_in_place(&mut p);
    p
}

/// First index of the maximum.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = i;
        }
    }
    best
}

/// Mean of the per-sequence softmax outputs and its argmax.
pub fn ensemble_predict(
    params: &ModelParams,
    enc: &StructuralEncoding,
    projected: &Matrix,
    seqs: &[SubgraphSequence],
) -> Result<(usize, Vec<f64>)> {
    if seqs.is_empty() {
        return Err(Error::InvalidParameter("no sequences to ensemble".into()));
    }
    let views: Vec<&[usize]> = seqs.iter().map(|s| s.nodes.as_slice()).collect();
    let mut tape = Tape::eval();
    let out = forward_batch(&mut tape, params, enc, Input::Projected(projected), &views)?;
    let probs = mean_softmax(tape.value(out.logits));
    Ok((argmax(&probs), probs))
}

fn mean_softmax(logits: &Matrix) -> Vec<f64> {
    let mut acc = vec![0.0; logits.cols()];
    for row in logits.row_iter() {
        for (a, p) in acc.iter_mut().zip(softmax(row)) {
            *a += p;
        }
    }
    let inv = 1.0 / logits.rows() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    acc
}

/// Per-node outputs of batched evaluation.
pub struct NodeOutputs {
    pub probs: Vec<Vec<f64>>,
    /// Target-token embedding averaged over the node's sequences.
    pub embeddings: Vec<Vec<f64>>,
}

/// Evaluates the ensembles of `nodes` in fixed-size chunks (in parallel).
pub fn predict_nodes(
    params: &ModelParams,
    enc: &StructuralEncoding,
    x_final: &Matrix,
    sequences: &[Vec<SubgraphSequence>],
    nodes: &[usize],
) -> Result<NodeOutputs> {
    let projected = params.project_all(x_final)?;
    if let Some(&bad) = nodes.iter().find(|&&v| v >= sequences.len()) {
        return Err(Error::UnknownNode { id: bad, n: sequences.len() });
    }
    let chunks: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = nodes
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| -> Result<_> {
            let mut views = Vec::new();
            let mut counts = Vec::with_capacity(chunk.len());
            for &v in chunk {
                if sequences[v].is_empty() {
                    return Err(Error::InvalidParameter(format!("node {v} has no sequences")));
                }
                counts.push(sequences[v].len());
                views.extend(sequences[v].iter().map(|s| s.nodes.as_slice()));
            }
            let mut tape = Tape::eval();
            let out = forward_batch(&mut tape, params, enc, Input::Projected(&projected), &views)?;
            let (logits, readout) = (tape.value(out.logits), tape.value(out.readout));
            let mut probs = Vec::with_capacity(chunk.len());
            let mut embs = Vec::with_capacity(chunk.len());
            let mut start = 0;
            for c in counts {
                let rows: Vec<usize> = (start..start + c).collect();
                probs.push(mean_softmax(&logits.select_rows(&rows)));
                let r = readout.select_rows(&rows);
                let mut e = vec![0.0; r.cols()];
                for row in r.row_iter() {
                    e.iter_mut().zip(row).for_each(|(a, x)| *a += x);
                }
                e.iter_mut().for_each(|a| *a /= c as f64);
                embs.push(e);
                start += c;
            }
            Ok((probs, embs))
        })
        .collect::<Result<_>>()?;
    let mut out = NodeOutputs {
        probs: Vec::with_capacity(nodes.len()),
        embeddings: Vec::with_capacity(nodes.len()),
    };
    for (p, e) in chunks {
        out.probs.extend(p);
        out.embeddings.extend(e);
    }
    Ok(out)
}
