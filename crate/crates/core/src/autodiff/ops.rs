use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::Arc;

use rand::Rng;

use super::{accumulate, BiasTables, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::{gemm, CsrMatrix, Matrix};

pub const LAYER_NORM_EPS: f64 = 1e-5;

fn shape_err(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Error {
    Error::Shape { op, lhs, rhs }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

#[inline]
fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Exact GELU, `x Φ(x)`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    x * std_normal_cdf(x)
}

fn softmax_rows_in_place(m: &mut Matrix) {
    for i in 0..m.rows() {
        softmax_in_place(m.row_mut(i));
    }
}

#[inline]
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        z += *x;
    }
    for x in row.iter_mut() {
        *x /= z;
    }
}

impl Tape {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", sa, sb));
        }
        let mut out = Matrix::zeros(sa.0, sb.1);
        gemm(1.0, self.value(a), false, self.value(b), false, 0.0, &mut out);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// Elementwise sum; `b` may also be a single row broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let mut out = self.value(a).clone();
        if sa == sb {
            out.add_assign(self.value(b));
        } else if sb.0 == 1 && sb.1 == sa.1 {
            let row = self.value(b).row(0).to_vec();
            for i in 0..sa.0 {
                for (o, r) in out.row_mut(i).iter_mut().zip(&row) {
                    *o += r;
                }
            }
        } else {
            return Err(shape_err("add", sa, sb));
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    /// Concatenation along the last (column) axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::InvalidParameter("concat of zero tensors".into()));
        };
        let rows = self.shape(first).0;
        let mut out = self.value(first).clone();
        for &p in &parts[1..] {
            if self.shape(p).0 != rows {
                return Err(shape_err("concat_cols", self.shape(first), self.shape(p)));
            }
            out = out.hcat(self.value(p))?;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        softmax_rows_in_place(&mut out);
        let ng = self.needs(a);
        self.push(out, Op::RowSoftmax(a), ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        let ng = self.needs(a);
        self.push(out, Op::Gelu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.needs(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    /// Normalizes each row to zero mean and unit variance, then applies the
    /// `1 × cols` scale `gamma` and shift `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        for p in [gamma, beta] {
            if self.shape(p) != (1, cols) {
                return Err(shape_err("layer_norm", (rows, cols), self.shape(p)));
            }
        }
        let xv = self.value(x);
        let mut xhat = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for i in 0..rows {
            let r = xv.row(i);
            let mean = r.iter().sum::<f64>() / cols as f64;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, v) in xhat.row_mut(i).iter_mut().zip(r) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let (g, b) = (self.value(gamma).row(0), self.value(beta).row(0));
        let mut out = xhat.clone();
        for i in 0..rows {
            for ((o, gj), bj) in out.row_mut(i).iter_mut().zip(g).zip(b) {
                *o = *o * gj + bj;
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Inverted dropout: zeroes entries with probability `p` and scales
    /// survivors by `1/(1-p)`. Returns `x` itself in eval mode or when
    /// `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("dropout rate {p} not in [0, 1)")));
        }
        if p == 0.0 || !self.is_training() {
            return Ok(x);
        }
        let len = self.value(x).as_slice().len();
        let keep = 1.0 / (1.0 - p);
        let rng = self.dropout_rng().expect("training tapes carry a generator");
        let mask: Vec<f64> = (0..len)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mut out = self.value(x).clone();
        for (o, m) in out.as_mut_slice().iter_mut().zip(&mask) {
            *o *= m;
        }
        let ng = self.needs(x);
        Ok(self.push(out, Op::Dropout { x, mask }, ng))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(shape_err("gather_rows", (rows, cols), (bad, 0)));
        }
        let out = self.value(x).select_rows(idx);
        let ng = self.needs(x);
        Ok(self.push(
            out,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            ng,
        ))
    }

    /// Product of a constant sparse matrix with `x`.
    pub fn spmm(&mut self, a: Arc<CsrMatrix>, x: Var) -> Result<Var> {
        let out = a.mul_dense(self.value(x))?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::SpMM { a, x }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.needs(x);
        self.push(Matrix::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let s = m.sum() / (m.rows() * m.cols()).max(1) as f64;
        let ng = self.needs(x);
        self.push(Matrix::scalar(s), Op::Mean(x), ng)
    }

    /// Per-head attention bias from learnable mixing weights `w`
    /// (`heads × orders`) and constant structural tables. Output row
    /// `(b·heads + h)·len + i`, column `j` holds
    /// `Σ_m w[h, m] · alphas[b][m][i][j]`.
    pub fn mix_bias(&mut self, w: Var, tables: Arc<BiasTables>) -> Result<Var> {
        let (heads, orders) = self.shape(w);
        if orders != tables.orders || tables.alphas.len() != tables.batch * orders * tables.len * tables.len {
            return Err(shape_err(
                "mix_bias",
                (heads, orders),
                (tables.batch * tables.len, tables.orders),
            ));
        }
        let len = tables.len;
        let wv = self.value(w);
        let mut out = Matrix::zeros(tables.batch * heads * len, len);
        for b in 0..tables.batch {
            for h in 0..heads {
                let block = &mut out.as_mut_slice()
                    [(b * heads + h) * len * len..(b * heads + h + 1) * len * len];
                for m in 0..orders {
                    let c = wv.get(h, m);
                    if c == 0.0 {
                        continue;
                    }
                    for (o, a) in block.iter_mut().zip(tables.at(b, m)) {
                        *o += c * a;
                    }
                }
            }
        }
        let ng = self.needs(w);
        Ok(self.push(out, Op::MixBias { w, tables }, ng))
    }

    /// Multi-head scaled dot-product attention over a batch of equal-length
    /// sequences stacked row-wise. `q`, `k`, `v` are `(batch·len) × width`
    /// with `width` split evenly into `heads`; `bias`, when given, is laid
    /// out as produced by [`Tape::mix_bias`]. Returns the concatenated head
    /// outputs, `(batch·len) × width`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        bias: Option<Var>,
        heads: usize,
        len: usize,
    ) -> Result<Var> {
        let (rows, width) = self.shape(q);
        if self.shape(k) != (rows, width) || self.shape(v) != (rows, width) {
            return Err(shape_err("attention", self.shape(q), self.shape(k)));
        }
        if heads == 0 || width % heads != 0 || len == 0 || rows % len != 0 {
            return Err(Error::InvalidParameter(format!(
                "attention: width {width} / heads {heads} / rows {rows} / len {len} incompatible"
            )));
        }
        let batch = rows / len;
        if let Some(b) = bias {
            if self.shape(b) != (batch * heads * len, len) {
                return Err(shape_err("attention bias", (batch * heads * len, len), self.shape(b)));
            }
        }
        let dk = width / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let bv = bias.map(|b| self.value(b));
        let mut probs = Matrix::zeros(batch * heads * len, len);
        let mut out = Matrix::zeros(rows, width);
        for b in 0..batch {
            for h in 0..heads {
                let c0 = h * dk;
                for i in 0..len {
                    let pr = (b * heads + h) * len + i;
                    let qi = &qv.row(b * len + i)[c0..c0 + dk];
                    let prow = probs.row_mut(pr);
                    for (j, p) in prow.iter_mut().enumerate() {
                        let kj = &kv.row(b * len + j)[c0..c0 + dk];
                        *p = qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale;
                    }
                    if let Some(bm) = bv {
                        for (p, bb) in prow.iter_mut().zip(bm.row(pr)) {
                            *p += bb;
                        }
                    }
                    softmax_in_place(prow);
                    let prow = probs.row(pr);
                    let orow = &mut out.row_mut(b * len + i)[c0..c0 + dk];
                    for (j, &p) in prow.iter().enumerate() {
                        let vj = &vv.row(b * len + j)[c0..c0 + dk];
                        for (o, x) in orow.iter_mut().zip(vj) {
                            *o += p * x;
                        }
                    }
                }
            }
        }
        let ng = self.needs(q) || self.needs(k) || self.needs(v) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                bias,
                heads,
                len,
                probs,
            },
            ng,
        ))
    }

    /// Attention weights cached by an [`Tape::attention`] node.
    pub fn attention_probs(&self, v: Var) -> Option<&Matrix> {
        match &self.node(v).op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Mean over rows of `−log softmax(logits_i)[labels_i]`, stabilized by
    /// max subtraction.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (rows, cols) = self.shape(logits);
        if labels.len() != rows {
            return Err(shape_err("softmax_cross_entropy", (rows, cols), (labels.len(), 1)));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= cols) {
            return Err(Error::InvalidParameter(format!("label {bad} out of range for {cols} classes")));
        }
        let lv = self.value(logits);
        let mut probs = lv.clone();
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = lv.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
            softmax_in_place(probs.row_mut(i));
        }
        loss /= rows.max(1) as f64;
        let ng = self.needs(logits);
        Ok(self.push(
            Matrix::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            ng,
        ))
    }
}

/// Propagates `g`, the gradient of node `i`, to its inputs.
pub(crate) fn backward_node(tape: &Tape, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
    let node = &tape.nodes[i];
    match &node.op {
        Op::Leaf | Op::Param => unreachable!("leaves are handled by the caller"),
        Op::MatMul(a, b) => {
            let (av, bv) = (tape.value(*a), tape.value(*b));
            if tape.needs(*a) {
                let mut ga = Matrix::zeros(av.rows(), av.cols());
                gemm(1.0, g, false, bv, true, 0.0, &mut ga);
                accumulate(grads, *a, ga);
            }
            if tape.needs(*b) {
                let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                gemm(1.0, av, true, g, false, 0.0, &mut gb);
                accumulate(grads, *b, gb);
            }
        }
        Op::Add(a, b) => {
            if tape.needs(*a) {
                accumulate(grads, *a, g.clone());
            }
            if tape.needs(*b) {
                if tape.shape(*b) == g.shape() {
                    accumulate(grads, *b, g.clone());
                } else {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for row in g.row_iter() {
                        for (o, x) in gb.row_mut(0).iter_mut().zip(row) {
                            *o += x;
                        }
                    }
                    accumulate(grads, *b, gb);
                }
            }
        }
        Op::Scale(a, s) => accumulate(grads, *a, g.map(|x| x * s)),
        Op::ConcatCols(parts) => {
            let mut c0 = 0;
            for &p in parts {
                let (rows, cols) = tape.shape(p);
                if tape.needs(p) {
                    let mut gp = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + cols]);
                    }
                    accumulate(grads, p, gp);
                }
                c0 += cols;
            }
        }
        Op::RowSoftmax(a) => {
            let y = &node.value;
            let mut ga = Matrix::zeros(y.rows(), y.cols());
            for r in 0..y.rows() {
                let (yr, gr) = (y.row(r), g.row(r));
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for ((o, yv), gv) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                    *o = yv * (gv - dot);
                }
            }
            accumulate(grads, *a, ga);
        }
        Op::Gelu(a) => {
            let x = tape.value(*a);
            let mut ga = g.clone();
            for (o, &xv) in ga.as_mut_slice().iter_mut().zip(x.as_slice()) {
                *o *= std_normal_cdf(xv) + xv * std_normal_pdf(xv);
            }
            accumulate(grads, *a, ga);
        }
        Op::Sigmoid(a) => {
            let mut ga = g.clone();
            for (o, &y) in ga.as_mut_slice().iter_mut().zip(node.value.as_slice()) {
                *o *= y * (1.0 - y);
            }
            accumulate(grads, *a, ga);
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let (rows, cols) = xhat.shape();
            if tape.needs(*gamma) {
                let mut gg = Matrix::zeros(1, cols);
                for r in 0..rows {
                    for ((o, gv), xh) in gg.row_mut(0).iter_mut().zip(g.row(r)).zip(xhat.row(r)) {
                        *o += gv * xh;
                    }
                }
                accumulate(grads, *gamma, gg);
            }
            if tape.needs(*beta) {
                let mut gb = Matrix::zeros(1, cols);
                for r in 0..rows {
                    for (o, gv) in gb.row_mut(0).iter_mut().zip(g.row(r)) {
                        *o += gv;
                    }
                }
                accumulate(grads, *beta, gb);
            }
            if tape.needs(*x) {
                let gam = tape.value(*gamma).row(0);
                let n = cols as f64;
                let mut gx = Matrix::zeros(rows, cols);
                let mut dxhat = vec![0.0; cols];
                for r in 0..rows {
                    for ((d, gv), gm) in dxhat.iter_mut().zip(g.row(r)).zip(gam) {
                        *d = gv * gm;
                    }
                    let xh = xhat.row(r);
                    let sum_d: f64 = dxhat.iter().sum();
                    let sum_dx: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
                    let is = inv_std[r];
                    for ((o, d), xv) in gx.row_mut(r).iter_mut().zip(&dxhat).zip(xh) {
                        *o = is / n * (n * d - sum_d - xv * sum_dx);
                    }
                }
                accumulate(grads, *x, gx);
            }
        }
        Op::Dropout { x, mask } => {
            let mut gx = g.clone();
            for (o, m) in gx.as_mut_slice().iter_mut().zip(mask) {
                *o *= m;
            }
            accumulate(grads, *x, gx);
        }
        Op::GatherRows { x, idx } => {
            let (rows, cols) = tape.shape(*x);
            let mut gx = Matrix::zeros(rows, cols);
            for (r, &src) in idx.iter().enumerate() {
                for (o, v) in gx.row_mut(src).iter_mut().zip(g.row(r)) {
                    *o += v;
                }
            }
            accumulate(grads, *x, gx);
        }
        Op::SpMM { a, x } => {
            let mut gx = Matrix::zeros(a.cols(), g.cols());
            for r in 0..a.rows() {
                let (idx, vals) = a.row(r);
                let gr = g.row(r);
                for (&j, &w) in idx.iter().zip(vals) {
                    for (o, gv) in gx.row_mut(j).iter_mut().zip(gr) {
                        *o += w * gv;
                    }
                }
            }
            accumulate(grads, *x, gx);
        }
        Op::Sum(x) => {
            let (r, c) = tape.shape(*x);
            accumulate(grads, *x, Matrix::filled(r, c, g.get(0, 0)));
        }
        Op::Mean(x) => {
            let (r, c) = tape.shape(*x);
            accumulate(grads, *x, Matrix::filled(r, c, g.get(0, 0) / (r * c).max(1) as f64));
        }
        Op::MixBias { w, tables } => {
            let (heads, orders) = tape.shape(*w);
            let len = tables.len;
            let mut gw = Matrix::zeros(heads, orders);
            for b in 0..tables.batch {
                for h in 0..heads {
                    let block = &g.as_slice()[(b * heads + h) * len * len..(b * heads + h + 1) * len * len];
                    for m in 0..orders {
                        let s: f64 = block.iter().zip(tables.at(b, m)).map(|(x, y)| x * y).sum();
                        gw.set(h, m, gw.get(h, m) + s);
                    }
                }
            }
            accumulate(grads, *w, gw);
        }
        Op::Attention {
            q,
            k,
            v,
            bias,
            heads,
            len,
            probs,
        } => {
            let (heads, len) = (*heads, *len);
            let (rows, width) = tape.shape(*q);
            let batch = rows / len;
            let dk = width / heads;
            let scale = 1.0 / (dk as f64).sqrt();
            let (qv, kv, vv) = (tape.value(*q), tape.value(*k), tape.value(*v));
            let mut gq = Matrix::zeros(rows, width);
            let mut gk = Matrix::zeros(rows, width);
            let mut gv = Matrix::zeros(rows, width);
            let mut glogits = Matrix::zeros(batch * heads * len, len);
            let mut dp = vec![0.0; len];
            for b in 0..batch {
                for h in 0..heads {
                    let c0 = h * dk;
                    for i in 0..len {
                        let pr = (b * heads + h) * len + i;
                        let prow = probs.row(pr);
                        let go = &g.row(b * len + i)[c0..c0 + dk];
                        for (j, d) in dp.iter_mut().enumerate() {
                            let vj = &vv.row(b * len + j)[c0..c0 + dk];
                            *d = go.iter().zip(vj).map(|(x, y)| x * y).sum();
                            let gvj = &mut gv.row_mut(b * len + j)[c0..c0 + dk];
                            for (o, x) in gvj.iter_mut().zip(go) {
                                *o += prow[j] * x;
                            }
                        }
                        let dot: f64 = prow.iter().zip(&dp).map(|(a, b)| a * b).sum();
                        for ((o, p), d) in glogits.row_mut(pr).iter_mut().zip(prow).zip(&dp) {
                            *o = p * (d - dot);
                        }
                        let gl = glogits.row(pr);
                        let qi = &qv.row(b * len + i)[c0..c0 + dk];
                        for (j, &l) in gl.iter().enumerate() {
                            let ls = l * scale;
                            let kj = &kv.row(b * len + j)[c0..c0 + dk];
                            let gqi = &mut gq.row_mut(b * len + i)[c0..c0 + dk];
                            for (o, x) in gqi.iter_mut().zip(kj) {
                                *o += ls * x;
                            }
                            let gkj = &mut gk.row_mut(b * len + j)[c0..c0 + dk];
                            for (o, x) in gkj.iter_mut().zip(qi) {
                                *o += ls * x;
                            }
                        }
                    }
                }
            }
            if tape.needs(*q) {
                accumulate(grads, *q, gq);
            }
            if tape.needs(*k) {
                accumulate(grads, *k, gk);
            }
            if tape.needs(*v) {
                accumulate(grads, *v, gv);
            }
            if let Some(bv) = bias {
                if tape.needs(*bv) {
                    accumulate(grads, *bv, glogits);
                }
            }
        }
        Op::SoftmaxCrossEntropy {
            logits,
            labels,
            probs,
        } => {
            let s = g.get(0, 0) / labels.len().max(1) as f64;
            let mut gl = probs.clone();
            for (r, &y) in labels.iter().enumerate() {
                let row = gl.row_mut(r);
                row[y] -= 1.0;
                row.iter_mut().for_each(|x| *x *= s);
            }
            accumulate(grads, *logits, gl);
        }
    }
}
