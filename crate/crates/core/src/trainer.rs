//! Episodic end-to-end training.
//!
//! Each episode samples prototypes by warm-started Langevin chains and scores
//! the query set by the chain-averaged likelihood. The whole computation,
//! including the unrolled chain with its noise held fixed, is recorded on a
//! tape so that graph-network and encoder parameters receive exact gradients.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tape};
use crate::checkpoint::{write_checkpoint, Checkpoint};
use crate::data::{sample_episode, Dataset, Episode, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate_fewshot, EpisodeSpec};
use crate::graph::RelationGraph;
use crate::likelihood::{encode, EncoderParams, Encoded};
use crate::numerics::{Mat, RngStream};
use crate::prior::{relation_summaries_for, Activation, GnnParams};
use crate::sampler::{init_prototypes, mc_class_log_probs, sgld_chain, support_statistics, PrototypeSamples, SamplerConfig};

/// Every trainable parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S = f64> {
    pub gnn: GnnParams<S>,
    pub encoder: EncoderParams<S>,
}

impl<S: Copy> ModelParams<S> {
    pub fn num_values(&self) -> usize {
        self.gnn.num_values() + self.encoder.num_values()
    }

    /// Graph parameters, then encoder parameters.
    pub fn flatten(&self) -> Vec<S> {
        let mut v = self.gnn.flatten();
        v.extend(self.encoder.flatten());
        v
    }

    pub fn with_values<T: Copy>(&self, values: &[T]) -> Result<ModelParams<T>> {
        if values.len() != self.num_values() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} model parameters",
                values.len(),
                self.num_values()
            )));
        }
        let (g, e) = values.split_at(self.gnn.num_values());
        Ok(ModelParams {
            gnn: self.gnn.with_values(g)?,
            encoder: self.encoder.with_values(e)?,
        })
    }

    pub fn map<T: Copy>(&self, mut f: impl FnMut(S) -> T) -> ModelParams<T> {
        ModelParams {
            gnn: self.gnn.map(&mut f),
            encoder: self.encoder.map(&mut f),
        }
    }

    /// Prototype dimension.
    pub fn dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn check_dims(&self, dataset_dim: usize, graph: &RelationGraph) -> Result<()> {
        if self.encoder.input_dim() != dataset_dim {
            return Err(Error::ShapeMismatch(format!(
                "encoder expects {} features, dataset has {dataset_dim}",
                self.encoder.input_dim()
            )));
        }
        if self.gnn.input_dim() != graph.feature_dim() {
            return Err(Error::ShapeMismatch(format!(
                "graph network expects {} features, graph has {}",
                self.gnn.input_dim(),
                graph.feature_dim()
            )));
        }
        if self.gnn.output_dim() != self.encoder.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "graph network outputs {} dimensions, encoder {}",
                self.gnn.output_dim(),
                self.encoder.output_dim()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderMode {
    #[default]
    Identity,
    Linear,
}

impl fmt::Display for EncoderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderMode::Identity => "identity",
            EncoderMode::Linear => "linear",
        })
    }
}

impl FromStr for EncoderMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(EncoderMode::Identity),
            "linear" => Ok(EncoderMode::Linear),
            other => Err(Error::InvalidArgument(format!("unknown encoder mode {other:?}"))),
        }
    }
}

/// Architecture choices for freshly initialized parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: EncoderMode,
    pub gnn_layers: usize,
    pub activation: Activation,
    pub gnn_bias: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            encoder: EncoderMode::Identity,
            gnn_layers: 1,
            activation: Activation::Identity,
            gnn_bias: true,
        }
    }
}

impl ModelParams<f64> {
    /// Fan-in uniform initialization. With an identity encoder the prototype
    /// dimension equals the feature dimension.
    pub fn init(spec: &ModelSpec, feature_dim: usize, graph_dim: usize, stream: &RngStream) -> Result<Self> {
        let encoder = match spec.encoder {
            EncoderMode::Identity => EncoderParams::Identity { dim: feature_dim },
            EncoderMode::Linear => EncoderParams::init_linear(feature_dim, feature_dim, &stream.fork(1))?,
        };
        let gnn = GnnParams::init(
            graph_dim,
            encoder.output_dim(),
            spec.gnn_layers,
            spec.activation,
            spec.gnn_bias,
            &stream.fork(0),
        )?;
        Ok(ModelParams { gnn, encoder })
    }
}

/// Random streams for episode `index`: one for sampling the task, one for chain noise.
pub fn episode_streams(base: &RngStream, index: usize) -> (RngStream, RngStream) {
    let root = base.fork(index as u64);
    (root.fork(0), root.fork(1))
}

/// Posterior prototype samples for an episode, given the target rows of the
/// relation summaries. Returns the samples and the encoded queries.
pub fn episode_posterior<S: Scalar>(
    episode: &Episode,
    summaries: &Mat<S>,
    encoder: &EncoderParams<S>,
    config: &SamplerConfig,
    stream: &RngStream,
) -> Result<(PrototypeSamples<S>, Vec<Encoded<S>>)> {
    let encode_items = |items: &[crate::data::EpisodeItem]| {
        items
            .iter()
            .map(|item| {
                Ok(Encoded {
                    slot: item.slot,
                    encoding: encode(&item.features, encoder)?,
                })
            })
            .collect::<Result<Vec<_>>>()
    };
    let support = encode_items(&episode.support)?;
    let queries = encode_items(&episode.query)?;
    let n = episode.n_way();
    let stats = support_statistics(&support, n)?;
    let init = init_prototypes(
        &stats,
        summaries,
        config.effective_alpha(),
        config.beta,
        config.chains,
        stream,
    )?;
    let samples = sgld_chain(&support, summaries, &episode.targets, init, config)?;
    Ok((samples, queries))
}

/// Prior means for the episode targets: graph summaries, or zeros when the
/// graph prior is disabled.
pub fn target_summaries<S: Scalar>(
    episode: &Episode,
    graph: &RelationGraph,
    gnn: &GnnParams<S>,
    config: &SamplerConfig,
) -> Result<Mat<S>> {
    if config.graph_prior {
        let rows: Vec<usize> = episode.targets.iter().map(|r| r.index()).collect();
        relation_summaries_for(graph, gnn, &rows)
    } else {
        Ok(Mat::zeros(episode.n_way(), gnn.output_dim()))
    }
}

/// Negative Monte Carlo log-likelihood of the query labels, summed over queries.
pub fn episode_loss<S: Scalar>(
    episode: &Episode,
    graph: &RelationGraph,
    params: &ModelParams<S>,
    config: &SamplerConfig,
    stream: &RngStream,
) -> Result<S> {
    config.validate()?;
    let summaries = target_summaries(episode, graph, &params.gnn, config)?;
    let (samples, queries) = episode_posterior(episode, &summaries, &params.encoder, config, stream)?;
    let mut loss = S::zero();
    for q in &queries {
        let lp = mc_class_log_probs(&q.encoding, &samples, config.measure, config.tau)?;
        loss = loss - lp[q.slot];
    }
    Ok(loss)
}

/// Loss and its gradient with respect to every model parameter.
pub fn episode_objective_and_grads(
    episode: &Episode,
    graph: &RelationGraph,
    params: &ModelParams,
    config: &SamplerConfig,
    stream: &RngStream,
) -> Result<(f64, ModelParams)> {
    let tape = Tape::with_capacity(1 << 16);
    let flat = params.flatten();
    let vars: Vec<_> = flat.iter().map(|&x| tape.var(x)).collect();
    let lifted = params.with_values(&vars)?;
    let loss = episode_loss(episode, graph, &lifted, config, stream)?;
    if !loss.value().is_finite() {
        return Err(Error::NonFiniteLoss {
            seed: stream.seed,
            stream: stream.stream_id,
        });
    }
    let grads = tape.gradient(loss);
    let g: Vec<f64> = vars.iter().map(|&v| grads.wrt(v)).collect();
    Ok((loss.value(), params.with_values(&g)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub episodes: usize,
    pub n_way: usize,
    pub k_shot: usize,
    pub q_per: usize,
    pub learning_rate: f64,
    /// Rescale the episode gradient to at most this L2 norm; `None` is plain SGD.
    pub max_grad_norm: Option<f64>,
    pub sampler: SamplerConfig,
    pub model: ModelSpec,
    /// Validate and checkpoint every this many episodes; 0 disables both until the end.
    pub eval_every: usize,
    pub val_episodes: usize,
    pub checkpoint_path: Option<PathBuf>,
    pub seed: u64,
    /// Fill the `wall_ms` log column. Off by default so logs replay byte for byte.
    pub record_wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 500,
            n_way: 5,
            k_shot: 1,
            q_per: 5,
            learning_rate: 0.1,
            max_grad_norm: None,
            sampler: SamplerConfig::default(),
            model: ModelSpec::default(),
            eval_every: 100,
            val_episodes: 50,
            checkpoint_path: None,
            seed: 0,
            record_wall_clock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        if self.n_way == 0 || self.k_shot == 0 || self.q_per == 0 {
            return Err(Error::InvalidArgument("n_way, k_shot and q_per must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if self.max_grad_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::InvalidArgument("gradient norm cap must be positive".into()));
        }
        Ok(())
    }

    /// Flat `key=value` description, stable in order.
    pub fn echo(&self) -> Vec<(String, String)> {
        let s = &self.sampler;
        let m = &self.model;
        vec![
            ("episodes".into(), self.episodes.to_string()),
            ("n_way".into(), self.n_way.to_string()),
            ("k_shot".into(), self.k_shot.to_string()),
            ("q_per".into(), self.q_per.to_string()),
            ("learning_rate".into(), self.learning_rate.to_string()),
            (
                "max_grad_norm".into(),
                self.max_grad_norm.map_or_else(|| "none".into(), |c| c.to_string()),
            ),
            ("chains".into(), s.chains.to_string()),
            ("steps".into(), s.steps.to_string()),
            ("epsilon0".into(), s.epsilon0.to_string()),
            ("step_decay".into(), s.step_decay.to_string()),
            ("alpha".into(), s.alpha.to_string()),
            ("beta".into(), s.beta.to_string()),
            ("tau".into(), s.tau.to_string()),
            ("measure".into(), s.measure.to_string()),
            ("noise".into(), s.noise_enabled.to_string()),
            ("graph_prior".into(), s.graph_prior.to_string()),
            ("encoder".into(), m.encoder.to_string()),
            ("gnn_layers".into(), m.gnn_layers.to_string()),
            ("activation".into(), m.activation.to_string()),
            ("gnn_bias".into(), m.gnn_bias.to_string()),
            ("eval_every".into(), self.eval_every.to_string()),
            ("val_episodes".into(), self.val_episodes.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub episode_index: usize,
    pub loss: f64,
    pub val_accuracy: Option<f64>,
    pub wall_ms: Option<u128>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<LogRow>,
}

// Stream ids keep training, validation and initialization draws apart.
const INIT_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;
const VAL_STREAM: u64 = 2;

/// Trains freshly initialized parameters.
pub fn train(dataset: &Dataset, graph: &RelationGraph, config: &TrainConfig) -> Result<TrainOutcome> {
    let params = ModelParams::init(
        &config.model,
        dataset.dim(),
        graph.feature_dim(),
        &RngStream::new(config.seed, INIT_STREAM),
    )?;
    train_from(params, dataset, graph, config)
}

/// Plain SGD over episodes, one episode per step.
pub fn train_from(
    mut params: ModelParams,
    dataset: &Dataset,
    graph: &RelationGraph,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    params.check_dims(dataset.dim(), graph)?;
    if dataset.id_bound() > graph.num_nodes() {
        return Err(Error::ShapeMismatch(format!(
            "graph has {} nodes but the dataset uses relation ids up to {}",
            graph.num_nodes(),
            dataset.id_bound() - 1
        )));
    }
    if config.episodes == 0 {
        return Ok(TrainOutcome { params, log: Vec::new() });
    }
    dataset.check_episode_shape(Split::Train, config.n_way, config.k_shot + config.q_per)?;
    let validate = !dataset.split_relations(Split::Val).is_empty() && config.val_episodes > 0;
    if validate {
        dataset.check_episode_shape(Split::Val, config.n_way, config.k_shot + config.q_per)?;
    }

    let train_stream = RngStream::new(config.seed, TRAIN_STREAM);
    let val_stream = RngStream::new(config.seed, VAL_STREAM);
    let started = Instant::now();
    let mut log = Vec::with_capacity(config.episodes);
    for i in 0..config.episodes {
        let mut step = || -> Result<f64> {
            let (task_stream, chain_stream) = episode_streams(&train_stream, i);
            let episode = sample_episode(dataset, Split::Train, config.n_way, config.k_shot, config.q_per, &task_stream)?;
            let (loss, grads) = episode_objective_and_grads(&episode, graph, &params, &config.sampler, &chain_stream)?;
            let grads = grads.flatten();
            let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
            let scale = match config.max_grad_norm {
                Some(cap) if norm > cap => cap / norm,
                _ => 1.0,
            };
            let updated: Vec<f64> = params
                .flatten()
                .iter()
                .zip(grads)
                .map(|(p, g)| p - config.learning_rate * scale * g)
                .collect();
            params = params.with_values(&updated)?;
            Ok(loss)
        };
        let loss = step().map_err(|e| Error::Episode { episode: i, source: Box::new(e) })?;

        let last = i + 1 == config.episodes;
        let checkpoint_due = (config.eval_every > 0 && (i + 1) % config.eval_every == 0) || last;
        let val_accuracy = if validate && checkpoint_due {
            let spec = EpisodeSpec {
                split: Split::Val,
                n_way: config.n_way,
                k_shot: config.k_shot,
                q_per: config.q_per,
                episodes: config.val_episodes,
            };
            let report = evaluate_fewshot(dataset, graph, &params, &spec, &config.sampler, &val_stream)?;
            Some(report.accuracy)
        } else {
            None
        };
        if checkpoint_due {
            if let Some(path) = &config.checkpoint_path {
                write_checkpoint(
                    path,
                    &Checkpoint {
                        params: params.clone(),
                        config: config.echo(),
                    },
                )?;
            }
        }
        log.push(LogRow {
            episode_index: i,
            loss,
            val_accuracy,
            wall_ms: config.record_wall_clock.then(|| started.elapsed().as_millis()),
        });
    }
    Ok(TrainOutcome { params, log })
}

/// CSV with columns `episode_index,loss,val_accuracy,wall_ms`; blanks where absent.
pub fn write_training_log(path: &Path, log: &[LogRow]) -> Result<()> {
    let mut text = String::from("episode_index,loss,val_accuracy,wall_ms\n");
    for row in log {
        let val = row.val_accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
        let wall = row.wall_ms.map(|w| w.to_string()).unwrap_or_default();
        text.push_str(&format!("{},{:.6},{val},{wall}\n", row.episode_index, row.loss));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
