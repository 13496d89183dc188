//! Few-shot relation classification with prototypes drawn from a posterior
//! whose prior is centred on graph-network summaries of a relation graph.
//!
//! The pipeline: build a kNN graph over relation embeddings ([`graph`]),
//! propagate it into per-relation prior means ([`prior`]), sample prototypes
//! with warm-started Langevin chains ([`sampler`]) under a softmax support
//! likelihood ([`likelihood`]), and train the graph network and encoder by
//! differentiating through the chains ([`trainer`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod likelihood;
pub mod numerics;
pub mod prior;
pub mod sampler;
pub mod trainer;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use data::{
    generate_synthetic, load_dataset, sample_episode, save_dataset, Dataset, Episode, EpisodeItem, LabeledInstance,
    RelationEntry, RelationId, Split, SynthConfig,
};
pub use error::{Error, Result};
pub use eval::{
    emit_report, evaluate_fewshot, evaluate_zeroshot, sensitivity_sweep, EpisodeSpec, EvalReport, EvalSetting,
    ReportFormat, SweepAxis,
};
pub use gradcheck::{gradient_check_suite, GradCheck};
pub use graph::{build_knn_graph, normalized_adjacency, RelationEmbeddings, RelationGraph};
pub use likelihood::{EncoderParams, SimilarityMeasure};
pub use numerics::{Mat, RngStream};
pub use prior::{relation_summaries, Activation, GnnParams};
pub use sampler::{PrototypeSamples, SamplerConfig};
pub use trainer::{
    episode_objective_and_grads, train, train_from, write_training_log, EncoderMode, LogRow, ModelParams, ModelSpec,
    TrainConfig, TrainOutcome,
};
