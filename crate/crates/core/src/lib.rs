//! Node classification with a structure-aware graph transformer.
//!
//! The pipeline has three stages:
//!
//! 1. **Enrichment** ([`enrich`]): raw features are amplified by a GCN that
//!    aggregates over a feature-compatibility graph, offset by each node's
//!    degree, and concatenated with the closest class centroid.
//! 2. **Sampling** ([`sampler`]): a personalized-PageRank matrix drives the
//!    construction of `q` fixed-length node sequences per target node.
//! 3. **Classification** ([`model`], [`train`]): a transformer whose
//!    attention logits carry a learned bias built from powers of the
//!    normalized adjacency reads out the target token of each sequence;
//!    predictions are averaged over the `q` sequences.
//!
//! [`graph`] and [`metrics`] hold the graph representation and the dataset
//! statistics, [`autodiff`] the small reverse-mode engine used for training,
//! and [`pipeline`] ties everything to on-disk artifacts.

pub mod autodiff;
pub mod dataset;
pub mod enrich;
mod error;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use graph::{CompatibilityMatrix, Graph};
pub use linalg::{CsrMatrix, Matrix};
pub use metrics::DatasetMetrics;
pub use enrich::{EnrichedFeatures, GcnParams};
pub use model::{ModelConfig, ModelParams, StructuralEncoding};
pub use pipeline::RunConfig;
pub use sampler::{SamplingMatrix, SubgraphSequence};
pub use train::{SplitMasks, TrainConfig};
