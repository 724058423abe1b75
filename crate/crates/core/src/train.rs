//! Splits, the two training stages, and evaluation.
//!
//! The GCN that produces `P` is trained first, on its own, through an
//! auxiliary linear head; its weights are then frozen. The transformer is
//! trained afterwards on individual sequences of training nodes and
//! evaluated on per-node ensembles.

use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{lr_schedule, Adam, AdamConfig, Gradients, Mode, ParamId, ParamStore, Tape, Var};
use crate::enrich::{gcn_amplify, GcnParams};
use crate::error::{Error, Result};
use crate::graph::{CompatibilityMatrix, Graph};
use crate::linalg::{glorot_uniform, CsrMatrix, Matrix};
use crate::model::{argmax, forward_batch, predict_nodes, Input, ModelConfig, ModelParams, StructuralEncoding};
use crate::rng::{derive_seed, stream, Domain};
use crate::sampler::SubgraphSequence;

/// Disjoint node sets covering the graph, each sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMasks {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl SplitMasks {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Checks disjointness and coverage of `0..n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &v in self.train.iter().chain(&self.val).chain(&self.test) {
            if v >= n {
                return Err(Error::UnknownNode { id: v, n });
            }
            if std::mem::replace(&mut seen[v], true) {
                return Err(Error::InvalidParameter(format!("node {v} appears in two splits")));
            }
        }
        match seen.iter().position(|s| !s) {
            Some(v) => Err(Error::InvalidParameter(format!("node {v} is in no split"))),
            None => Ok(()),
        }
    }
}

fn split_sizes(n: usize, fractions: [f64; 3]) -> (usize, usize) {
    let t = (fractions[0] * n as f64 + 1e-9).floor() as usize;
    let v = (fractions[1] * n as f64 + 1e-9).floor() as usize;
    (t.min(n), v.min(n - t.min(n)))
}

/// Largest-remainder allocation of `total` over classes proportional to
/// `frac · size`, never exceeding `cap`.
fn apportion(sizes: &[usize], frac: f64, total: usize, cap: &[usize]) -> Option<Vec<usize>> {
    let quotas: Vec<f64> = sizes.iter().map(|&s| frac * s as f64).collect();
    let mut alloc: Vec<usize> = quotas
        .iter()
        .zip(cap)
        .map(|(q, &c)| ((q + 1e-9).floor() as usize).min(c))
        .collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut missing = total.checked_sub(alloc.iter().sum())?;
    for &k in order.iter().cycle().take(order.len() * 2) {
        if missing == 0 {
            break;
        }
        if alloc[k] < cap[k] {
            alloc[k] += 1;
            missing -= 1;
        }
    }
    (missing == 0).then_some(alloc)
}

/// Train/val/test split of sizes `floor(f0·n)`, `floor(f1·n)` and the
/// remainder, stratified by label when every class has a node for each
/// non-empty split.
pub fn make_splits(g: &Graph, fractions: [f64; 3], seed: u64) -> Result<SplitMasks> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    let n = g.num_nodes();
    let (nt, nv) = split_sizes(n, fractions);
    let mut rng = stream(seed, Domain::Split, 0);
    let u = g.num_classes();
    let mut by_class = vec![Vec::new(); u];
    for (v, &y) in g.labels().iter().enumerate() {
        by_class[y].push(v);
    }
    let parts = fractions.iter().filter(|&&f| f > 0.0).count();
    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let stratified = sizes.iter().all(|&s| s >= parts).then(|| {
        let train = apportion(&sizes, fractions[0], nt, &sizes)?;
        let rest: Vec<usize> = sizes.iter().zip(&train).map(|(s, t)| s - t).collect();
        let val = apportion(&sizes, fractions[1], nv, &rest)?;
        Some((train, val))
    });

    let mut masks = SplitMasks {
        train: Vec::with_capacity(nt),
        val: Vec::with_capacity(nv),
        test: Vec::with_capacity(n - nt - nv),
    };
    match stratified.flatten() {
        Some((train, val)) => {
            for (k, nodes) in by_class.iter_mut().enumerate() {
                nodes.shuffle(&mut rng);
                masks.train.extend_from_slice(&nodes[..train[k]]);
                masks.val.extend_from_slice(&nodes[train[k]..train[k] + val[k]]);
                masks.test.extend_from_slice(&nodes[train[k] + val[k]..]);
            }
        }
        None => {
            log::warn!("some class is too small to stratify {parts} splits; using an unstratified split");
            let mut nodes: Vec<usize> = (0..n).collect();
            nodes.shuffle(&mut rng);
            masks.train.extend_from_slice(&nodes[..nt]);
            masks.val.extend_from_slice(&nodes[nt..nt + nv]);
            masks.test.extend_from_slice(&nodes[nt + nv..]);
        }
    }
    masks.train.sort_unstable();
    masks.val.sort_unstable();
    masks.test.sort_unstable();
    Ok(masks)
}

/// `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcnTrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub epochs: usize,
}

impl Default for GcnTrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            weight_decay: 5e-4,
            hidden: 128,
            layers: 2,
            dropout: 0.3,
            epochs: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerTrainConfig {
    pub lr_start: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for TransformerTrainConfig {
    fn default() -> Self {
        Self {
            lr_start: 2e-4,
            lr_end: 1e-9,
            weight_decay: 0.01,
            batch_size: 32,
            epochs: 300,
        }
    }
}

/// Optimizer settings for both stages. Transformer dropout lives in
/// [`ModelConfig`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gcn: GcnTrainConfig,
    pub transformer: TransformerTrainConfig,
    /// Epochs without a strict validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gcn: GcnTrainConfig::default(),
            transformer: TransformerTrainConfig::default(),
            patience: 50,
        }
    }
}

impl TrainConfig {
    pub fn with_patience(patience: usize) -> Self {
        Self {
            patience,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.gcn;
        let t = &self.transformer;
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(g.lr > 0.0 && t.lr_start > 0.0 && t.lr_end > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if g.weight_decay < 0.0 || t.weight_decay < 0.0 {
            return bad("weight decay must be nonnegative".into());
        }
        if g.hidden == 0 || g.layers == 0 {
            return bad("GCN sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&g.dropout) {
            return bad(format!("GCN dropout {} outside [0, 1)", g.dropout));
        }
        if t.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        Ok(())
    }
}


pub struct GcnStage {
    pub params: GcnParams,
    /// Frozen amplified features, `n × d`.
    pub p: Matrix,
    pub losses: Vec<f64>,
    /// Auxiliary-head accuracy on the training nodes, dropout off.
    pub train_accuracy: f64,
}

struct GcnModel {
    store: ParamStore,
    head_w: ParamId,
    head_b: ParamId,
    num_layers: usize,
}

impl GcnModel {
    fn loss(&self, tape: &mut Tape, x: &Matrix, c_hat: &Arc<CsrMatrix>, nodes: &[usize], labels: &[usize], dropout: f64) -> Result<Var> {
        let mut h = tape.constant(x.clone());
        for l in 0..self.num_layers {
            h = tape.dropout(h, dropout)?;
            let w = tape.param(&self.store, ParamId(l));
            h = tape.matmul(h, w)?;
            h = tape.spmm(c_hat.clone(), h)?;
            h = tape.sigmoid(h);
        }
        let z = tape.gather_rows(h, nodes)?;
        let (w, b) = (tape.param(&self.store, self.head_w), tape.param(&self.store, self.head_b));
        let logits = tape.matmul(z, w)?;
        let logits = tape.add(logits, b)?;
        tape.softmax_cross_entropy(logits, labels)
    }

    fn gcn_params(&self) -> Result<GcnParams> {
        GcnParams::new((0..self.num_layers).map(|l| self.store.get(ParamId(l)).clone()).collect())
    }
}

/// Trains the amplification GCN with a linear head on the training nodes
/// and returns the frozen output `P`.
pub fn train_gcn_stage(g: &Graph, comp: &CompatibilityMatrix, masks: &SplitMasks, cfg: &GcnTrainConfig, seed: u64) -> Result<GcnStage> {
    if masks.train.is_empty() {
        return Err(Error::InvalidParameter("no training nodes".into()));
    }
    let d = g.feature_dim();
    let mut rng = stream(seed, Domain::GcnInit, 0);
    let init = GcnParams::init(d, cfg.hidden, cfg.layers, &mut rng)?;
    let mut store = ParamStore::new();
    for (l, w) in init.layers().iter().enumerate() {
        store.add(format!("gcn{l}.w"), w.clone());
    }
    let head_w = store.add("head.w", glorot_uniform(d, g.num_classes(), &mut rng));
    let head_b = store.add("head.b", Matrix::zeros(1, g.num_classes()));
    let mut model = GcnModel {
        store,
        head_w,
        head_b,
        num_layers: cfg.layers,
    };

    let c_hat = Arc::new(comp.normalized());
    let labels: Vec<usize> = masks.train.iter().map(|&v| g.labels()[v]).collect();
    let mut opt = Adam::new(AdamConfig::adam(cfg.lr, cfg.weight_decay), &model.store);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut last_finite = f64::NAN;
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new(Mode::Train(derive_seed(seed, Domain::GcnDropout, epoch as u64)));
        let loss = model.loss(&mut tape, g.features(), &c_hat, &masks.train, &labels, cfg.dropout)?;
        let value = tape.value(loss).get(0, 0);
        if !value.is_finite() {
            return Err(Error::Divergence {
                epoch,
                last_finite_loss: last_finite,
            });
        }
        last_finite = value;
        losses.push(value);
        tape.backward(loss)?;
        let grads = tape.param_grads(&model.store);
        opt.step(&mut model.store, &grads);
    }

    let params = model.gcn_params()?;
    let p = gcn_amplify(g, comp, &params)?;
    let z = p.select_rows(&masks.train);
    let mut logits = z.matmul(model.store.get(head_w))?;
    let hb = model.store.get(head_b);
    for i in 0..logits.rows() {
        logits.row_mut(i).iter_mut().zip(hb.row(0)).for_each(|(o, b)| *o += b);
    }
    let correct = logits
        .row_iter()
        .zip(&labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(GcnStage {
        params,
        p,
        losses,
        train_accuracy: correct as f64 / labels.len() as f64,
    })
}

/// Inputs shared by transformer training and evaluation.
#[derive(Clone, Copy)]
pub struct TransformerData<'a> {
    pub x_final: &'a Matrix,
    pub enc: &'a StructuralEncoding,
    /// `q` sequences per node, indexed by node id.
    pub sequences: &'a [Vec<SubgraphSequence>],
    pub labels: &'a [usize],
}

/// Mean cross-entropy of a batch of `(node, sequence index)` instances
/// plus parameter gradients and the number of correct argmax predictions.
pub fn batch_loss(
    params: &ModelParams,
    data: &TransformerData<'_>,
    batch: &[(usize, usize)],
    mode: Mode,
) -> Result<(f64, Gradients, usize)> {
    let seqs: Vec<&[usize]> = batch.iter().map(|&(v, s)| data.sequences[v][s].nodes.as_slice()).collect();
    let labels: Vec<usize> = batch.iter().map(|&(v, _)| data.labels[v]).collect();
    let mut tape = Tape::new(mode);
    let out = forward_batch(&mut tape, params, data.enc, Input::Raw(data.x_final), &seqs)?;
    let correct = tape
        .value(out.logits)
        .row_iter()
        .zip(&labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    let loss = tape.softmax_cross_entropy(out.logits, &labels)?;
    let value = tape.value(loss).get(0, 0);
    tape.backward(loss)?;
    Ok((value, tape.param_grads(&params.store), correct))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

pub struct TransformerStage {
    /// Parameters of the epoch with the best validation accuracy.
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

/// Trains on every sequence of every training node as an independent
/// instance, with a linear learning-rate decay over the full epoch budget
/// and early stopping on validation ensemble accuracy.
pub fn train_transformer_stage(
    data: &TransformerData<'_>,
    masks: &SplitMasks,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TransformerStage> {
    cfg.validate()?;
    let n = data.x_final.rows();
    if data.sequences.len() != n || data.labels.len() != n {
        return Err(Error::InvalidParameter(format!(
            "{} sequence lists and {} labels for {n} nodes",
            data.sequences.len(),
            data.labels.len()
        )));
    }
    let num_classes = data.labels.iter().copied().max().map_or(1, |m| m + 1);
    let mut params = ModelParams::init(model_cfg, data.x_final.cols(), num_classes, seed)?;
    train_transformer_from(&mut params, data, masks, cfg, seed)
}

/// As [`train_transformer_stage`] but starting from given parameters.
pub fn train_transformer_from(
    params: &mut ModelParams,
    data: &TransformerData<'_>,
    masks: &SplitMasks,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TransformerStage> {
    let t = &cfg.transformer;
    let mut instances: Vec<(usize, usize)> = masks
        .train
        .iter()
        .flat_map(|&v| (0..data.sequences[v].len()).map(move |s| (v, s)))
        .collect();
    if instances.is_empty() {
        return Err(Error::InvalidParameter("no training sequences".into()));
    }
    let steps_per_epoch = instances.len().div_ceil(t.batch_size);
    let total_steps = steps_per_epoch * t.epochs;
    let mut opt = Adam::new(AdamConfig::adamw(t.lr_start, t.weight_decay), &params.store);
    let mut history = Vec::new();
    let mut best: Option<(ModelParams, usize, f64)> = None;
    let mut since_best = 0;
    let mut last_finite = f64::NAN;
    let mut step = 0;

    for epoch in 0..t.epochs {
        let mut rng = stream(seed, Domain::Shuffle, epoch as u64);
        instances.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for batch in instances.chunks(t.batch_size) {
            opt.set_lr(lr_schedule(step, total_steps, t.lr_start, t.lr_end));
            let mode = Mode::Train(derive_seed(seed, Domain::Dropout, step as u64));
            let (loss, grads, ok) = batch_loss(params, data, batch, mode)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    last_finite_loss: last_finite,
                });
            }
            last_finite = loss;
            loss_sum += loss * batch.len() as f64;
            correct += ok;
            opt.step(&mut params.store, &grads);
            step += 1;
        }
        let val_acc = if masks.val.is_empty() {
            0.0
        } else {
            evaluate(params, data, &masks.val)?
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / instances.len() as f64,
            train_acc: correct as f64 / instances.len() as f64,
            val_acc,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train {:.4} val {:.4}",
            record.train_loss,
            record.train_acc,
            record.val_acc
        );
        history.push(record);
        if best.as_ref().is_none_or(|(_, _, b)| val_acc > *b) {
            best = Some((params.clone(), epoch, val_acc));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= cfg.patience {
            break;
        }
    }

    let (best_params, best_epoch, best_val_acc) = best.unwrap_or_else(|| (params.clone(), 0, 0.0));
    Ok(TransformerStage {
        params: best_params,
        history,
        best_epoch,
        best_val_acc,
    })
}

/// Fraction of `nodes` whose ensemble prediction equals their label.
pub fn evaluate(params: &ModelParams, data: &TransformerData<'_>, nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Ok(0.0);
    }
    let out = predict_nodes(params, data.enc, data.x_final, data.sequences, nodes)?;
    let correct = nodes
        .iter()
        .zip(&out.probs)
        .filter(|(&v, p)| argmax(p) == data.labels[v])
        .count();
    Ok(correct as f64 / nodes.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::random_graph;

    #[test]
    fn ten_node_sizes() {
        let g = random_graph(10, 0.2, 2, 0);
        let m = make_splits(&g, [0.6, 0.2, 0.2], 1).unwrap();
        assert_eq!((m.train.len(), m.val.len(), m.test.len()), (6, 2, 2));
        m.validate(10).unwrap();
        assert_eq!(m, make_splits(&g, [0.6, 0.2, 0.2], 1).unwrap());
    }

    #[test]
    fn stratified_sizes_follow_floor_rule() {
        let g = random_graph(2708, 0.0005, 1, 3);
        let m = make_splits(&g, [0.6, 0.2, 0.2], 0).unwrap();
        assert_eq!(m.train.len(), 1624);
        assert_eq!(m.val.len(), 541);
        assert_eq!(m.test.len(), 543);
        m.validate(2708).unwrap();
        let frac = |set: &[usize], k: usize| set.iter().filter(|&&v| g.labels()[v] == k).count();
        for k in 0..3 {
            let total = frac(&(0..2708).collect::<Vec<_>>(), k) as f64;
            assert!((frac(&m.train, k) as f64 - 0.6 * total).abs() <= 1.0);
        }
    }

    #[test]
    fn tiny_class_falls_back() {
        let g = Graph::new(6, [], Matrix::zeros(6, 1), vec![0, 0, 0, 0, 0, 1], 2).unwrap();
        let m = make_splits(&g, [0.5, 0.25, 0.25], 2).unwrap();
        m.validate(6).unwrap();
        assert_eq!(m.train.len(), 3);
    }

    #[test]
    fn bad_fractions() {
        let g = random_graph(10, 0.2, 2, 0);
        assert!(make_splits(&g, [0.6, 0.3, 0.3], 0).is_err());
    }

    #[test]
    fn cross_entropy_values() {
        assert!((cross_entropy(&[0.0, 0.0, 0.0], 1) - 3f64.ln()).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for m in [0.0, 1.0, 5.0, 20.0] {
            let l = cross_entropy(&[m, 0.0], 0);
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-8);
    }
}
