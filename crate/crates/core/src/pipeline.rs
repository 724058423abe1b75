//! End-to-end runs with on-disk artifacts.
//!
//! Stages and what they write into the run directory:
//!
//! | stage        | inputs                         | outputs                                   |
//! |--------------|--------------------------------|-------------------------------------------|
//! | `metrics`    | dataset                        | `metrics.json`                            |
//! | `preprocess` | dataset                        | `splits.json`, `xfinal.txt`, `class_reps.txt` |
//! | `sample`     | dataset                        | `subgraphs.txt`                           |
//! | `train`      | `preprocess`, `sample`         | `checkpoint.json`, `history.csv`          |
//! | `eval`       | `train`                        | `result.json`, optional `embeddings.txt`  |
//!
//! `provenance.json` records the dataset, the full configuration and a
//! SHA-256 input hash per stage. With `resume`, a stage whose hash and
//! outputs are unchanged is loaded from disk instead of recomputed; any
//! recomputed stage forces its dependents to recompute too.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{dataset_files, load_dataset, read_matrix, write, write_matrix, Dataset};
use crate::enrich::{enrich, ClassRepSource};
use crate::error::{Error, Result};
use crate::graph::{compatibility_matrix, Graph};
use crate::linalg::Matrix;
use crate::metrics::{dataset_metrics, DatasetMetrics};
use crate::model::{predict_nodes, ModelConfig, ModelParams, StructuralEncoding};
use crate::sampler::{sample_subgraphs, sampling_matrix, SubgraphSequence};
use crate::train::{
    evaluate, make_splits, train_gcn_stage, train_transformer_stage, EpochRecord, SplitMasks, TrainConfig,
    TransformerData,
};

pub const PROVENANCE_VERSION: u32 = 1;

/// Everything that determines a run apart from the dataset contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Cosine threshold of the compatibility graph.
    pub tau: f64,
    /// PPR restart probability.
    pub c: f64,
    pub splits: [f64; 3],
    pub class_reps: ClassRepSource,
    /// Divide the degree offset by the maximum degree.
    pub deg_norm: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            tau: 0.5,
            c: 0.15,
            splits: [0.6, 0.2, 0.2],
            class_reps: ClassRepSource::Train,
            deg_norm: false,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidParameter(format!("tau {} outside [-1, 1]", self.tau)));
        }
        if !(self.c > 0.0 && self.c <= 1.0) {
            return Err(Error::InvalidParameter(format!("c {} outside (0, 1]", self.c)));
        }
        self.model.validate()?;
        self.train.validate()
    }

    /// Reads a config file. A `provenance.json` is accepted too, in which
    /// case its recorded configuration is used.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let cfg: RunConfig = match value.get("stages").and(value.get("config")) {
            Some(inner) => serde_json::from_value(inner.clone())?,
            None => serde_json::from_value(value)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Metrics,
    Preprocess,
    Sample,
    Train,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Metrics, Stage::Preprocess, Stage::Sample, Stage::Train, Stage::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Metrics => "metrics",
            Stage::Preprocess => "preprocess",
            Stage::Sample => "sample",
            Stage::Train => "train",
            Stage::Eval => "eval",
        }
    }

    fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Train => &[Stage::Preprocess, Stage::Sample],
            Stage::Eval => &[Stage::Train, Stage::Preprocess, Stage::Sample],
            _ => &[],
        }
    }

    fn outputs(self, emit_embeddings: bool) -> Vec<&'static str> {
        match self {
            Stage::Metrics => vec!["metrics.json"],
            Stage::Preprocess => vec!["splits.json", "xfinal.txt", "class_reps.txt"],
            Stage::Sample => vec!["subgraphs.txt"],
            Stage::Train => vec!["checkpoint.json", "history.csv"],
            Stage::Eval if emit_embeddings => vec!["result.json", "embeddings.txt"],
            Stage::Eval => vec!["result.json"],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub input_hash: String,
    pub outputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: u32,
    pub dataset: PathBuf,
    pub dataset_hash: String,
    pub config: RunConfig,
    pub stages: BTreeMap<String, StageRecord>,
}

/// Reported by `eval`. Contains no timestamps, so identical runs produce
/// identical files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub test_accuracy: f64,
    pub val_accuracy: f64,
    pub train_accuracy: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub seed: u64,
    pub config: RunConfig,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub resume: bool,
    pub emit_embeddings: bool,
    /// Last stage to run; its dependencies run first.
    pub target: Stage,
}

#[derive(Clone, Debug, Default)]
pub struct RunOutcome {
    pub metrics: Option<DatasetMetrics>,
    pub result: Option<RunResult>,
    /// Stages that were actually computed (not loaded).
    pub computed: Vec<Stage>,
    /// Stages satisfied from existing artifacts.
    pub reused: Vec<Stage>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

fn hash_parts(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex(&h.finalize())
}

pub fn dataset_hash(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for path in dataset_files(dir) {
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex(&h.finalize()))
}

fn stage_hashes(cfg: &RunConfig, data_hash: &str, emit_embeddings: bool) -> Result<BTreeMap<Stage, String>> {
    let json = |v: serde_json::Value| serde_json::to_vec(&v).expect("json values serialize");
    let mut out = BTreeMap::new();
    out.insert(Stage::Metrics, hash_parts(&[b"metrics", data_hash.as_bytes()]));
    let pre = json(serde_json::json!({
        "tau": cfg.tau,
        "splits": cfg.splits,
        "class_reps": cfg.class_reps,
        "deg_norm": cfg.deg_norm,
        "gcn": cfg.train.gcn,
        "seed": cfg.seed,
    }));
    out.insert(Stage::Preprocess, hash_parts(&[b"preprocess", data_hash.as_bytes(), &pre]));
    let samp = json(serde_json::json!({
        "c": cfg.c,
        "k1": cfg.model.k1,
        "q": cfg.model.q,
        "seed": cfg.seed,
    }));
    out.insert(Stage::Sample, hash_parts(&[b"sample", data_hash.as_bytes(), &samp]));
    let tr = json(serde_json::json!({
        "model": cfg.model,
        "transformer": cfg.train.transformer,
        "patience": cfg.train.patience,
        "seed": cfg.seed,
    }));
    let train = hash_parts(&[b"train", out[&Stage::Preprocess].as_bytes(), out[&Stage::Sample].as_bytes(), &tr]);
    out.insert(Stage::Train, train.clone());
    let ev = json(serde_json::json!({ "embeddings": emit_embeddings, "config": cfg }));
    out.insert(Stage::Eval, hash_parts(&[b"eval", train.as_bytes(), &ev]));
    Ok(out)
}

fn stage_err(stage: Stage) -> impl FnOnce(Error) -> Error {
    move |e| Error::Stage {
        stage: stage.name(),
        source: Box::new(e),
    }
}

pub fn format_subgraphs(seqs: &[Vec<SubgraphSequence>]) -> String {
    let mut out = String::new();
    for per_node in seqs {
        for s in per_node {
            write!(out, "{}\t", s.target).unwrap();
            for (i, v) in s.nodes.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

/// Parses `subgraphs.txt`: `q` consecutive lines per node, in node order.
pub fn read_subgraphs(path: &Path, n: usize, q: usize) -> Result<Vec<Vec<SubgraphSequence>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut out: Vec<Vec<SubgraphSequence>> = vec![Vec::with_capacity(q); n];
    let mut count = 0;
    for (i, line) in text.lines().enumerate() {
        let no = i + 1;
        let (t, rest) = line
            .split_once('\t')
            .ok_or_else(|| err(no, "expected `target<TAB>ids`".into()))?;
        let target: usize = t.trim().parse().map_err(|_| err(no, format!("bad target `{t}`")))?;
        let nodes = rest
            .split_whitespace()
            .map(|tok| tok.parse::<usize>().map_err(|_| err(no, format!("bad node id `{tok}`"))))
            .collect::<Result<Vec<_>>>()?;
        let expect = count / q;
        if target != expect || nodes.first() != Some(&target) {
            return Err(err(no, format!("expected a sequence for node {expect} starting with it")));
        }
        if let Some(&bad) = nodes.iter().find(|&&v| v >= n) {
            return Err(err(no, format!("node id {bad} out of range")));
        }
        out[target].push(SubgraphSequence { target, nodes });
        count += 1;
    }
    if count != n * q {
        return Err(err(count + 1, format!("expected {} sequences, found {count}", n * q)));
    }
    Ok(out)
}

fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,train_acc,val_acc\n");
    for r in history {
        writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, r.train_acc, r.val_acc).unwrap();
    }
    s
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, &text)
}

/// Preprocessing artifacts.
pub struct Preprocessed {
    pub splits: SplitMasks,
    pub x_final: Matrix,
    pub class_reps: Matrix,
}

pub fn preprocess(g: &Graph, cfg: &RunConfig) -> Result<Preprocessed> {
    let splits = make_splits(g, cfg.splits, cfg.seed)?;
    let comp = compatibility_matrix(g, cfg.tau);
    log::info!("compatibility graph: {} pairs above tau = {}", comp.num_pairs(), cfg.tau);
    let gcn = train_gcn_stage(g, &comp, &splits, &cfg.train.gcn, cfg.seed)?;
    log::info!(
        "GCN stage: final loss {:.4}, train accuracy {:.4}",
        gcn.losses.last().copied().unwrap_or(f64::NAN),
        gcn.train_accuracy
    );
    let all: Vec<usize>;
    let rep_nodes = match cfg.class_reps {
        ClassRepSource::Train => &splits.train,
        ClassRepSource::All => {
            all = (0..g.num_nodes()).collect();
            &all
        }
    };
    let e = enrich(g, &gcn.p, rep_nodes, cfg.deg_norm)?;
    Ok(Preprocessed {
        splits,
        x_final: e.x_final,
        class_reps: e.class_reps,
    })
}

struct Run<'a> {
    opts: &'a RunOptions,
    cfg: &'a RunConfig,
    ds: Dataset,
    pre: Option<Preprocessed>,
    seqs: Option<Vec<Vec<SubgraphSequence>>>,
    params: Option<ModelParams>,
    history: Vec<EpochRecord>,
    best_epoch: usize,
}

impl Run<'_> {
    fn path(&self, file: &str) -> PathBuf {
        self.opts.out.join(file)
    }

    fn g(&self) -> &Graph {
        &self.ds.graph
    }

    fn compute(&mut self, stage: Stage, outcome: &mut RunOutcome) -> Result<()> {
        let cfg = self.cfg;
        match stage {
            Stage::Metrics => {
                let m = dataset_metrics(self.g());
                write_json(&self.path("metrics.json"), &m)?;
                outcome.metrics = Some(m);
            }
            Stage::Preprocess => {
                let pre = preprocess(self.g(), cfg)?;
                write_json(&self.path("splits.json"), &pre.splits)?;
                write_matrix(&self.path("xfinal.txt"), &pre.x_final)?;
                write_matrix(&self.path("class_reps.txt"), &pre.class_reps)?;
                self.pre = Some(pre);
            }
            Stage::Sample => {
                let s = sampling_matrix(self.g(), cfg.c)?;
                let seqs = sample_subgraphs(&s, cfg.model.k1, cfg.model.q, cfg.seed)?;
                write(&self.path("subgraphs.txt"), &format_subgraphs(&seqs))?;
                self.seqs = Some(seqs);
            }
            Stage::Train => {
                let enc = StructuralEncoding::new(self.g(), cfg.model.orders)?;
                let pre = self.pre.as_ref().expect("preprocess precedes train");
                let data = TransformerData {
                    x_final: &pre.x_final,
                    enc: &enc,
                    sequences: self.seqs.as_ref().expect("sample precedes train"),
                    labels: self.ds.graph.labels(),
                };
                let stage = train_transformer_stage(&data, &pre.splits, &cfg.model, &cfg.train, cfg.seed)?;
                stage.params.save(&self.path("checkpoint.json"))?;
                write(&self.path("history.csv"), &history_csv(&stage.history))?;
                self.history = stage.history;
                self.best_epoch = stage.best_epoch;
                self.params = Some(stage.params);
            }
            Stage::Eval => {
                let (result, embeddings) = self.evaluate()?;
                write_json(&self.path("result.json"), &result)?;
                if let Some(e) = embeddings {
                    write_matrix(&self.path("embeddings.txt"), &e)?;
                }
                outcome.result = Some(result);
            }
        }
        Ok(())
    }

    fn load(&mut self, stage: Stage, outcome: &mut RunOutcome) -> Result<()> {
        let n = self.g().num_nodes();
        match stage {
            Stage::Metrics => outcome.metrics = Some(read_json(&self.path("metrics.json"))?),
            Stage::Preprocess => {
                let splits: SplitMasks = read_json(&self.path("splits.json"))?;
                splits.validate(n)?;
                let d = self.g().feature_dim();
                self.pre = Some(Preprocessed {
                    splits,
                    x_final: read_matrix(&self.path("xfinal.txt"), Some(n), Some(3 * d))?,
                    class_reps: read_matrix(&self.path("class_reps.txt"), Some(self.g().num_classes()), Some(d))?,
                });
            }
            Stage::Sample => {
                self.seqs = Some(read_subgraphs(&self.path("subgraphs.txt"), n, self.cfg.model.q)?);
            }
            Stage::Train => {
                self.params = Some(ModelParams::load(&self.path("checkpoint.json"))?);
                self.history = read_history(&self.path("history.csv"))?;
                self.best_epoch = best_epoch(&self.history);
            }
            Stage::Eval => outcome.result = Some(read_json(&self.path("result.json"))?),
        }
        Ok(())
    }

    fn evaluate(&self) -> Result<(RunResult, Option<Matrix>)> {
        let cfg = self.cfg;
        let enc = StructuralEncoding::new(self.g(), cfg.model.orders)?;
        let pre = self.pre.as_ref().expect("preprocess precedes eval");
        let params = self.params.as_ref().expect("train precedes eval");
        let data = TransformerData {
            x_final: &pre.x_final,
            enc: &enc,
            sequences: self.seqs.as_ref().expect("sample precedes eval"),
            labels: self.ds.graph.labels(),
        };
        let result = RunResult {
            test_accuracy: evaluate(params, &data, &pre.splits.test)?,
            val_accuracy: evaluate(params, &data, &pre.splits.val)?,
            train_accuracy: evaluate(params, &data, &pre.splits.train)?,
            best_epoch: self.best_epoch,
            epochs_run: self.history.len(),
            seed: cfg.seed,
            config: cfg.clone(),
        };
        let embeddings = if self.opts.emit_embeddings {
            let all: Vec<usize> = (0..self.g().num_nodes()).collect();
            let out = predict_nodes(params, &enc, &pre.x_final, data.sequences, &all)?;
            Some(Matrix::from_rows(&out.embeddings)?)
        } else {
            None
        };
        Ok((result, embeddings))
    }
}

fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "malformed history row".into(),
            };
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                train_loss: f[1].parse().map_err(|_| bad())?,
                train_acc: f[2].parse().map_err(|_| bad())?,
                val_acc: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// First epoch with the highest validation accuracy.
fn best_epoch(history: &[EpochRecord]) -> usize {
    let mut best: Option<&EpochRecord> = None;
    for r in history {
        if best.is_none_or(|b| r.val_acc > b.val_acc) {
            best = Some(r);
        }
    }
    best.map_or(0, |r| r.epoch)
}

fn needed(target: Stage) -> Vec<Stage> {
    let mut want = vec![target];
    let mut i = 0;
    while i < want.len() {
        for &d in want[i].deps() {
            if !want.contains(&d) {
                want.push(d);
            }
        }
        i += 1;
    }
    let mut ordered: Vec<Stage> = Stage::ALL.iter().copied().filter(|s| want.contains(s)).collect();
    // The metrics stage is cheap and always part of a full run.
    if target == Stage::Eval && !ordered.contains(&Stage::Metrics) {
        ordered.insert(0, Stage::Metrics);
    }
    ordered
}

/// Runs `opts.target` and everything it depends on.
pub fn run_pipeline(cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let ds = load_dataset(&opts.dataset)?;
    std::fs::create_dir_all(&opts.out).map_err(|e| Error::io(&opts.out, e))?;
    let data_hash = dataset_hash(&opts.dataset)?;
    let mut echo = cfg.clone();
    echo.dataset = Some(opts.dataset.clone());
    let hashes = stage_hashes(&echo, &data_hash, opts.emit_embeddings)?;

    let prov_path = opts.out.join("provenance.json");
    let old: Option<Provenance> = if opts.resume && prov_path.exists() {
        Some(read_json(&prov_path)?)
    } else {
        None
    };
    let mut prov = Provenance {
        version: PROVENANCE_VERSION,
        dataset: opts.dataset.clone(),
        dataset_hash: data_hash,
        config: echo.clone(),
        stages: BTreeMap::new(),
    };
    if let Some(old) = &old {
        if old.dataset_hash == prov.dataset_hash {
            prov.stages = old.stages.clone();
        }
    }

    let mut run = Run {
        opts,
        cfg: &echo,
        ds,
        pre: None,
        seqs: None,
        params: None,
        history: Vec::new(),
        best_epoch: 0,
    };
    let mut outcome = RunOutcome::default();
    for stage in needed(opts.target) {
        let hash = &hashes[&stage];
        let outputs = stage.outputs(opts.emit_embeddings);
        let reusable = opts.resume
            && stage.deps().iter().all(|d| !outcome.computed.contains(d))
            && old
                .as_ref()
                .and_then(|o| o.stages.get(stage.name()))
                .is_some_and(|r| &r.input_hash == hash)
            && outputs.iter().all(|f| run.path(f).exists());
        let loaded = reusable && run.load(stage, &mut outcome).is_ok();
        if loaded {
            log::info!("stage {}: reusing artifacts", stage.name());
            outcome.reused.push(stage);
        } else {
            log::info!("stage {}: computing", stage.name());
            prov.stages.remove(stage.name());
            run.compute(stage, &mut outcome).map_err(stage_err(stage))?;
            outcome.computed.push(stage);
        }
        prov.stages.insert(
            stage.name().to_string(),
            StageRecord {
                input_hash: hash.clone(),
                outputs: outputs.iter().map(|s| s.to_string()).collect(),
            },
        );
        // Records of stages downstream of a recomputed one are stale.
        if !loaded {
            for later in Stage::ALL {
                if later.deps().contains(&stage) {
                    prov.stages.remove(later.name());
                }
            }
        }
        write_json(&prov_path, &prov)?;
    }
    Ok(outcome)
}

/// Recomputes the accuracies of a finished run directory from its
/// checkpoint and artifacts.
pub fn evaluate_run(run_dir: &Path) -> Result<RunResult> {
    let prov: Provenance = read_json(&run_dir.join("provenance.json"))?;
    let cfg = prov.config.clone();
    let opts = RunOptions {
        dataset: prov.dataset.clone(),
        out: run_dir.to_path_buf(),
        resume: true,
        emit_embeddings: false,
        target: Stage::Eval,
    };
    let ds = load_dataset(&prov.dataset)?;
    if dataset_hash(&prov.dataset)? != prov.dataset_hash {
        return Err(Error::Dataset {
            path: prov.dataset.clone(),
            msg: "dataset changed since the run was made".into(),
        });
    }
    let mut run = Run {
        opts: &opts,
        cfg: &cfg,
        ds,
        pre: None,
        seqs: None,
        params: None,
        history: Vec::new(),
        best_epoch: 0,
    };
    let mut outcome = RunOutcome::default();
    for stage in [Stage::Preprocess, Stage::Sample, Stage::Train] {
        run.load(stage, &mut outcome).map_err(stage_err(stage))?;
    }
    Ok(run.evaluate().map_err(stage_err(Stage::Eval))?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_validation() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.train.patience, 50);
        assert_eq!(cfg.train.transformer.batch_size, 32);
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
        let bad = RunConfig {
            c: 0.0,
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn dependency_order() {
        assert_eq!(needed(Stage::Sample), vec![Stage::Sample]);
        assert_eq!(
            needed(Stage::Eval),
            vec![Stage::Metrics, Stage::Preprocess, Stage::Sample, Stage::Train, Stage::Eval]
        );
    }

    #[test]
    fn subgraph_text_roundtrip() {
        let seqs = vec![
            vec![SubgraphSequence { target: 0, nodes: vec![0, 1] }],
            vec![SubgraphSequence { target: 1, nodes: vec![1, 0] }],
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.txt");
        std::fs::write(&p, format_subgraphs(&seqs)).unwrap();
        assert_eq!(read_subgraphs(&p, 2, 1).unwrap(), seqs);
        assert!(read_subgraphs(&p, 2, 2).is_err());
    }
}
