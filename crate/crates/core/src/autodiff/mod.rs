//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Trainable
//! tensors live in a [`ParamStore`] and enter a tape through
//! [`Tape::param`]; [`Tape::backward`] then accumulates `∂loss/∂param` for
//! every parameter reachable from the loss. A tape belongs to one thread;
//! parameter stores can move freely between threads.

mod gradcheck;
mod ops;
mod optim;

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, Matrix};
use crate::rng::Prng;

pub use gradcheck::{check_gradients, check_param_gradients, GradCheck};
pub use optim::{lr_schedule, Adam, AdamConfig};
pub(crate) use ops::softmax_in_place;
pub use ops::{gelu, LAYER_NORM_EPS};

/// Index of a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.as_slice().len()).sum()
    }
}

/// Per-parameter gradients produced by a backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.as_slice().iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.grads
            .iter()
            .flatten()
            .all(|g| g.as_slice().iter().all(|x| x.is_finite()))
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active; masks drawn from a stream seeded with the value.
    Train(u64),
    Eval,
}

/// Constant per-sequence structural tables for [`Tape::mix_bias`]:
/// `alphas[b][m][i][j]` for `batch` sequences of length `len` and `orders`
/// encoding functions.
#[derive(Clone, Debug)]
pub struct BiasTables {
    pub batch: usize,
    pub orders: usize,
    pub len: usize,
    pub alphas: Vec<f64>,
}

impl BiasTables {
    #[inline]
    pub fn at(&self, b: usize, m: usize) -> &[f64] {
        let sz = self.len * self.len;
        let off = (b * self.orders + m) * sz;
        &self.alphas[off..off + sz]
    }
}

pub(crate) enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    RowSoftmax(Var),
    Gelu(Var),
    Sigmoid(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    SpMM {
        a: Arc<CsrMatrix>,
        x: Var,
    },
    Sum(Var),
    Mean(Var),
    MixBias {
        w: Var,
        tables: Arc<BiasTables>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        bias: Option<Var>,
        heads: usize,
        len: usize,
        probs: Matrix,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Matrix,
    },
}

pub(crate) struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    accumulated: HashMap<usize, Matrix>,
    mode: Mode,
    rng: Option<Prng>,
}

impl Tape {
    pub fn new(mode: Mode) -> Self {
        let rng = match mode {
            Mode::Train(seed) => Some(crate::rng::stream(seed, crate::rng::Domain::Dropout, 0)),
            Mode::Eval => None,
        };
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            accumulated: HashMap::new(),
            mode,
            rng,
        }
    }

    pub fn eval() -> Self {
        Self::new(Mode::Eval)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        matches!(self.mode, Mode::Train(_))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub(crate) fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// An input whose gradient is tracked and readable via [`Tape::grad`].
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    /// Accumulated gradient of a tracked leaf or parameter node.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.accumulated.get(&v.0)
    }

    /// Gradients of all parameters registered on this tape, indexed like
    /// `store`.
    pub fn param_grads(&self, store: &ParamStore) -> Gradients {
        let mut grads = vec![None; store.len()];
        for (id, v) in &self.params {
            grads[id.0] = self.accumulated.get(&v.0).cloned();
        }
        Gradients { grads }
    }

    pub(crate) fn dropout_rng(&mut self) -> Option<&mut Prng> {
        self.rng.as_mut()
    }

    /// Reverse sweep from a scalar `loss`. Gradients of leaves and
    /// parameters are added to what earlier sweeps left, so two calls give
    /// twice the gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            match &self.nodes[i].op {
                Op::Leaf | Op::Param => match self.accumulated.get_mut(&i) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        self.accumulated.insert(i, g);
                    }
                },
                _ => ops::backward_node(self, i, &g, &mut grads),
            }
        }
        Ok(())
    }
}

/// Adds `g` into the pending gradient of `v`.
pub(crate) fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}
