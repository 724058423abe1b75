#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sagt_core::autodiff::{BiasTables, Mode, Tape, Var};
use sagt_core::linalg::{CsrMatrix, Matrix};
use sagt_core::{Graph, Result};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Erdős–Rényi graph with uniform features and `u` random labels.
pub fn random_graph(n: usize, p: f64, d: usize, u: usize, seed: u64) -> Graph {
    let mut r = rng(seed);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if r.random::<f64>() < p {
                edges.push((a, b));
            }
        }
    }
    let x = random_matrix(n, d, 1.0, &mut r);
    let labels = (0..n).map(|_| r.random_range(0..u)).collect();
    Graph::new(n, edges, x, labels, u).unwrap()
}

pub fn path3() -> Graph {
    Graph::new(
        3,
        [(0, 1), (1, 2)],
        Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap(),
        vec![0, 0, 1],
        2,
    )
    .unwrap()
}

/// Reduces a tensor to a scalar through a fixed random projection, so every
/// output entry influences the loss with a distinct weight.
pub fn project(t: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let cols = t.shape(v).1;
    let r = random_matrix(cols, 1, 1.0, &mut rng(seed ^ 0x9e37));
    let r = t.constant(r);
    let y = t.matmul(v, r)?;
    Ok(t.sum(y))
}

pub type OpFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Matrix>,
    pub mode: Mode,
    pub f: OpFn,
}

/// One finite-difference case per differentiable op, with shapes and
/// values drawn from `seed`.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut r = rng(seed);
    let rows = r.random_range(2..5);
    let cols = r.random_range(2..5);
    let inner = r.random_range(2..5);
    let m = |r: &mut ChaCha8Rng, a, b| random_matrix(a, b, 1.0, r);
    let mut cases = Vec::new();
    let s = seed;

    cases.push(OpCase {
        name: "matmul",
        inputs: vec![m(&mut r, rows, inner), m(&mut r, inner, cols)],
        mode: Mode::Eval,
        f: Box::new(move |t, v| {
            let y = t.matmul(v[0], v[1])?;
            project(t, y, s)
        }),
    });
    cases.push(OpCase {
        name: "add",
        inputs: vec![m(&mut r, rows, cols), m(&mut r, rows, cols)],
        mode: Mode::Eval,
        f: Box::new(move |t, v| {
            let y = t.add(v[0], v[1])?;
            project(t, y, s)
        }),
    });
    cases.push(OpCase {
        name: "add_broadcast",
        inputs: vec![m(&mut r, rows, cols), m(&mut r, 1, cols)],
        mode: Mode::Eval,
        f: Box::new(move |t, v| {
            let y = t.add(v[0], v[1])?;
            project(t, y, s)
        }),
    });
    cases.push(OpCase {
        name: "scale",
        inputs: vec![m(&mut r, rows, cols)],
        mode: Mode::Eval,
        f: Box::new(move |t, v| {
            let y = t.scale(v[0], -1.7);
            project(t, y, s)
        }),
    });
    cases.push(OpCase {
        name: "concat_cols",
        inputs: vec![m(&mut r, rows, cols), m(&mut r, rows, inner)],
        mode: Mode::Eval,
        f: Box::new(move |t, v| {
            let y = t.concat_cols(&[v[0], v[1], v[0]])?;
            project(t, y, s)
        }),
    });
    cases.push(OpCase {
        name: "row_softmax",
        inputs: vec![m(&mut r, rows, cols)],
        mode: Mode::Eval,
        f: Box::new(move |t, v| {
            let y = t.row_softmax(v[0]);
            project(t, y, s)
        }),
    });
    cases.push(OpCase {
        name: "gelu",
        inputs: vec![random_matrix(rows, cols, 3.0, &mut r)],
        mode: Mode::Eval,
        f: Box::new(move |t, v| {
            let y = t.gelu(v[0]);
            project(t, y, s)
        }),
    });
    cases.push(OpCase {
        name: "sigmoid",
        inputs: vec![random_matrix(rows, cols, 3.0, &mut r)],
        mode: Mode::Eval,
        f: Box::new(move |t, v| {
            let y = t.sigmoid(v[0]);
            project(t, y, s)
        }),
    });
    cases.push(OpCase {
        name: "layer_norm",
        inputs: vec![m(&mut r, rows, cols + 1), m(&mut r, 1, cols + 1), m(&mut r, 1, cols + 1)],
        mode: Mode::Eval,
        f: Box::new(move |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2])?;
            project(t, y, s)
        }),
    });
    cases.push(OpCase {
        name: "dropout",
        inputs: vec![m(&mut r, rows, cols)],
        mode: Mode::Train(seed),
        f: Box::new(move |t, v| {
            let y = t.dropout(v[0], 0.4)?;
            project(t, y, s)
        }),
    });
    let idx: Vec<usize> = (0..rows + 2).map(|_| r.random_range(0..rows)).collect();
    cases.push(OpCase {
        name: "gather_rows",
        inputs: vec![m(&mut r, rows, cols)],
        mode: Mode::Eval,
        f: Box::new(move |t, v| {
            let y = t.gather_rows(v[0], &idx)?;
            project(t, y, s)
        }),
    });
    let sp: Vec<Vec<(usize, f64)>> = (0..rows + 1)
        .map(|_| {
            let mut row = Vec::new();
            for j in 0..rows {
                if r.random::<f64>() < 0.6 {
                    row.push((j, r.random_range(-1.0..1.0)));
                }
            }
            row
        })
        .collect();
    let a = Arc::new(CsrMatrix::from_rows(rows, sp).unwrap());
    cases.push(OpCase {
        name: "spmm",
        inputs: vec![m(&mut r, rows, cols)],
        mode: Mode::Eval,
        f: Box::new(move |t, v| {
            let y = t.spmm(a.clone(), v[0])?;
            project(t, y, s)
        }),
    });
    cases.push(OpCase {
        name: "sum",
        inputs: vec![m(&mut r, rows, cols)],
        mode: Mode::Eval,
        f: Box::new(|t, v| {
            let y = t.gelu(v[0]);
            Ok(t.sum(y))
        }),
    });
    cases.push(OpCase {
        name: "mean",
        inputs: vec![m(&mut r, rows, cols)],
        mode: Mode::Eval,
        f: Box::new(|t, v| {
            let y = t.sigmoid(v[0]);
            Ok(t.mean(y))
        }),
    });
    let labels: Vec<usize> = (0..rows).map(|_| r.random_range(0..cols)).collect();
    cases.push(OpCase {
        name: "softmax_cross_entropy",
        inputs: vec![random_matrix(rows, cols, 2.0, &mut r)],
        mode: Mode::Eval,
        f: Box::new(move |t, v| t.softmax_cross_entropy(v[0], &labels)),
    });

    let (batch, len, heads, dk) = (2, r.random_range(1..5), 2, 2);
    let orders = 3;
    let alphas = (0..batch * orders * len * len).map(|_| r.random::<f64>()).collect();
    let tables = Arc::new(BiasTables {
        batch,
        orders,
        len,
        alphas,
    });
    let tb = tables.clone();
    cases.push(OpCase {
        name: "mix_bias",
        inputs: vec![m(&mut r, heads, orders)],
        mode: Mode::Eval,
        f: Box::new(move |t, v| {
            let y = t.mix_bias(v[0], tb.clone())?;
            project(t, y, s)
        }),
    });
    let width = heads * dk;
    cases.push(OpCase {
        name: "attention",
        inputs: vec![
            m(&mut r, batch * len, width),
            m(&mut r, batch * len, width),
            m(&mut r, batch * len, width),
            m(&mut r, heads, orders),
        ],
        mode: Mode::Eval,
        f: Box::new(move |t, v| {
            let bias = t.mix_bias(v[3], tables.clone())?;
            let y = t.attention(v[0], v[1], v[2], Some(bias), heads, len)?;
            project(t, y, s)
        }),
    });
    cases
}

/// Straightforward single-sequence multi-head attention without any bias,
/// written independently of the tape.
pub fn vanilla_attention(h: &Matrix, wq: &Matrix, wk: &Matrix, wv: &Matrix, heads: usize) -> Matrix {
    let q = h.matmul(wq).unwrap();
    let k = h.matmul(wk).unwrap();
    let v = h.matmul(wv).unwrap();
    let (len, width) = q.shape();
    let dk = width / heads;
    let mut out = Matrix::zeros(len, width);
    for hd in 0..heads {
        for i in 0..len {
            let mut logits = vec![0.0; len];
            for (j, l) in logits.iter_mut().enumerate() {
                let mut dot = 0.0;
                for c in 0..dk {
                    dot += q.get(i, hd * dk + c) * k.get(j, hd * dk + c);
                }
                *l = dot / (dk as f64).sqrt();
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            for (j, l) in logits.iter().enumerate() {
                let p = (l - max).exp() / z;
                for c in 0..dk {
                    let o = out.get(i, hd * dk + c) + p * v.get(j, hd * dk + c);
                    out.set(i, hd * dk + c, o);
                }
            }
        }
    }
    out
}

pub struct TinyModel {
    pub graph: Graph,
    pub enc: sagt_core::model::StructuralEncoding,
    pub x: Matrix,
    pub params: sagt_core::ModelParams,
}

/// Small random model on a 20-node graph. `mix_scale` > 0 randomizes the
/// structural mixing weights, which otherwise start at zero.
pub fn tiny_model(seed: u64, classes: usize, mix_scale: f64) -> TinyModel {
    use sagt_core::model::{ModelConfig, StructuralEncoding};
    let graph = random_graph(20, 0.2, 3, classes, seed);
    let cfg = ModelConfig {
        hidden: 8,
        layers: 2,
        heads: 2,
        dropout: 0.2,
        orders: 4,
        k1: 4,
        q: 2,
    };
    let enc = StructuralEncoding::new(&graph, cfg.orders).unwrap();
    let mut r = rng(seed + 7);
    let x = random_matrix(20, 6, 1.0, &mut r);
    let mut params = sagt_core::ModelParams::init(&cfg, 6, classes, seed).unwrap();
    if mix_scale > 0.0 {
        *params.store.get_mut(params.mix) = random_matrix(2, 4, mix_scale, &mut r);
    }
    TinyModel { graph, enc, x, params }
}

/// Cross-entropy of two 5-token sequences as a function of the store.
pub fn model_loss(m: &TinyModel) -> impl Fn(&mut Tape, &sagt_core::autodiff::ParamStore) -> Result<Var> + '_ {
    move |t, store| {
        let mut params = m.params.clone();
        params.store = store.clone();
        let seqs: [&[usize]; 2] = [&[3, 7, 0, 12, 5], &[9, 8, 1, 2, 4]];
        let out = sagt_core::model::forward_batch(t, &params, &m.enc, sagt_core::model::Input::Raw(&m.x), &seqs)?;
        t.softmax_cross_entropy(out.logits, &[1, 2])
    }
}

/// Writes a small two-block SBM dataset into `dir`.
pub fn write_sbm(dir: &std::path::Path, nodes: usize, seed: u64) -> Graph {
    use sagt_core::synth::{sbm, SbmConfig};
    let cfg = SbmConfig {
        nodes,
        feature_dim: 8,
        ..SbmConfig::default()
    };
    let g = sbm(&cfg, seed).unwrap();
    sagt_core::dataset::write_dataset(dir, &g, "sbm").unwrap();
    g
}

/// A configuration small enough for a pipeline run in well under a second.
pub fn quick_config() -> sagt_core::RunConfig {
    let mut cfg = sagt_core::RunConfig::default();
    cfg.model.hidden = 16;
    cfg.model.layers = 1;
    cfg.model.heads = 2;
    cfg.model.k1 = 5;
    cfg.model.q = 2;
    cfg.train.gcn.hidden = 16;
    cfg.train.gcn.epochs = 20;
    cfg.train.transformer.epochs = 3;
    cfg.train.transformer.lr_start = 1e-3;
    cfg.train.patience = 5;
    cfg
}
