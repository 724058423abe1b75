//! Fixtures shared by the benchmarks.

use sagt_core::model::{ModelConfig, ModelParams, StructuralEncoding};
use sagt_core::sampler::{sample_subgraphs, sampling_matrix, SubgraphSequence};
use sagt_core::synth::{sbm, SbmConfig};
use sagt_core::{Graph, Matrix};

pub fn sbm_graph(nodes: usize) -> Graph {
    let cfg = SbmConfig {
        nodes,
        p_in: 8.0 / nodes as f64,
        p_out: 0.8 / nodes as f64,
        ..SbmConfig::default()
    };
    sbm(&cfg, 0).expect("valid SBM config")
}

/// Model, encoding, tiled features and sequences for forward/backward
/// timing with the default model sizes.
pub struct ModelFixture {
    pub params: ModelParams,
    pub enc: StructuralEncoding,
    pub x_final: Matrix,
    pub sequences: Vec<Vec<SubgraphSequence>>,
    pub labels: Vec<usize>,
}

pub fn model_fixture(nodes: usize) -> ModelFixture {
    let g = sbm_graph(nodes);
    let cfg = ModelConfig::default();
    let x = g.features();
    let x_final = x.hcat(x).and_then(|m| m.hcat(x)).expect("same row count");
    let s = sampling_matrix(&g, 0.15).expect("valid damping");
    ModelFixture {
        params: ModelParams::init(&cfg, x_final.cols(), g.num_classes(), 0).expect("valid model config"),
        enc: StructuralEncoding::new(&g, cfg.orders).expect("positive orders"),
        sequences: sample_subgraphs(&s, cfg.k1, cfg.q, 0).expect("k1 below n"),
        labels: g.labels().to_vec(),
        x_final,
    }
}
