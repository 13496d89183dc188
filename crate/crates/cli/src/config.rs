//! Resolved run configuration: defaults, then a `key=value` file, then flags.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use protograph_core::eval::ReportFormat;
use protograph_core::{
    Activation, EncoderMode, EpisodeSpec, ModelSpec, SamplerConfig, SimilarityMeasure, Split, SweepAxis, SynthConfig,
    TrainConfig,
};

/// Option kinds: a flag takes no value on the command line.
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Value,
    Flag,
}

/// Every option, in the order it is echoed. Keys double as long flag names.
pub const OPTIONS: &[(&str, Kind, &str)] = &[
    ("data", Kind::Value, "Instance file: relation_id<TAB>features..."),
    ("registry", Kind::Value, "Relation registry: relation_id<TAB>name<TAB>split"),
    ("embeddings", Kind::Value, "Relation embeddings: relation_id<TAB>values..."),
    ("graph", Kind::Value, "Edge list u<TAB>v; built by k-NN when absent"),
    ("checkpoint", Kind::Value, "Checkpoint to write (train) or read (eval, zero-shot, sweep)"),
    ("out", Kind::Value, "Output directory"),
    ("seed", Kind::Value, "Master seed"),
    ("n-way", Kind::Value, "Target relations per episode (N)"),
    ("k-shot", Kind::Value, "Support instances per relation (K)"),
    ("q-per", Kind::Value, "Query instances per relation"),
    ("episodes", Kind::Value, "Training or evaluation episodes"),
    ("chains", Kind::Value, "Sampler chains (L)"),
    ("steps", Kind::Value, "Sampler steps per chain (M)"),
    ("step-size", Kind::Value, "Initial sampler step size"),
    ("step-decay", Kind::Value, "Step size decay exponent"),
    ("alpha", Kind::Value, "Weight of the graph summary in the warm start"),
    ("beta", Kind::Value, "Weight of the support grand mean in the warm start"),
    ("tau", Kind::Value, "Softmax temperature"),
    ("measure", Kind::Value, "Similarity measure: dot or euclidean"),
    ("knn", Kind::Value, "Neighbours per relation in the graph (k)"),
    ("lr", Kind::Value, "SGD learning rate"),
    ("no-noise", Kind::Flag, "Disable sampler noise"),
    ("no-graph-prior", Kind::Flag, "Zero prior mean and no graph term in the warm start"),
    ("threads", Kind::Value, "Worker threads; all cores when unset"),
    ("format", Kind::Value, "Report format: csv or json"),
    ("split", Kind::Value, "Evaluation split: train, val or test"),
    ("val-episodes", Kind::Value, "Validation episodes per check during training"),
    ("eval-every", Kind::Value, "Validate and checkpoint every this many episodes"),
    ("max-grad-norm", Kind::Value, "Clip episode gradients to this norm; none for plain SGD"),
    ("encoder", Kind::Value, "Encoder: identity or linear"),
    ("gnn-layers", Kind::Value, "Graph network layers"),
    ("activation", Kind::Value, "Hidden activation: identity or relu"),
    ("no-gnn-bias", Kind::Flag, "Graph layers without bias"),
    ("wall-clock", Kind::Flag, "Record wall_ms in the training log"),
    ("identity-maps", Kind::Flag, "Evaluate with identity graph network and encoder instead of a checkpoint"),
    ("relations", Kind::Value, "Synthetic: number of relations"),
    ("dim", Kind::Value, "Synthetic: feature and embedding dimension"),
    ("cluster-scale", Kind::Value, "Synthetic: spread of relation centres"),
    ("noise-scale", Kind::Value, "Synthetic: spread of instances around their centre"),
    ("instances", Kind::Value, "Synthetic: instances per relation"),
    ("embedding-noise", Kind::Value, "Synthetic: perturbation of embeddings away from centres"),
    ("train-relations", Kind::Value, "Synthetic: relations in the train split"),
    ("val-relations", Kind::Value, "Synthetic: relations in the val split"),
    ("axis", Kind::Value, "Sweep axis: chains or steps"),
    ("values", Kind::Value, "Sweep values, comma separated"),
    ("d", Kind::Value, "Gradient check dimension"),
    ("cases", Kind::Value, "Gradient check cases per component"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub n_way: usize,
    pub k_shot: usize,
    pub q_per: usize,
    pub episodes: usize,
    pub chains: usize,
    pub steps: usize,
    pub step_size: f64,
    pub step_decay: f64,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub measure: SimilarityMeasure,
    pub knn: usize,
    pub lr: f64,
    pub no_noise: bool,
    pub no_graph_prior: bool,
    pub threads: Option<usize>,
    pub format: ReportFormat,
    pub split: Split,
    pub val_episodes: usize,
    pub eval_every: usize,
    pub max_grad_norm: Option<f64>,
    pub encoder: EncoderMode,
    pub gnn_layers: usize,
    pub activation: Activation,
    pub no_gnn_bias: bool,
    pub wall_clock: bool,
    pub identity_maps: bool,
    pub relations: usize,
    pub dim: usize,
    pub cluster_scale: f64,
    pub noise_scale: f64,
    pub instances: usize,
    pub embedding_noise: f64,
    pub train_relations: usize,
    pub val_relations: usize,
    pub axis: SweepAxis,
    pub values: Vec<usize>,
    pub d: usize,
    pub cases: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sampler = SamplerConfig::default();
        let train = TrainConfig::default();
        let synth = SynthConfig::default();
        RunConfig {
            data: None,
            registry: None,
            embeddings: None,
            graph: None,
            checkpoint: None,
            out: PathBuf::from("out"),
            seed: 0,
            n_way: 5,
            k_shot: 1,
            q_per: 5,
            episodes: 500,
            chains: sampler.chains,
            steps: sampler.steps,
            step_size: sampler.epsilon0,
            step_decay: sampler.step_decay,
            alpha: sampler.alpha,
            beta: sampler.beta,
            tau: sampler.tau,
            measure: sampler.measure,
            knn: 10,
            lr: train.learning_rate,
            no_noise: false,
            no_graph_prior: false,
            threads: None,
            format: ReportFormat::Csv,
            split: Split::Test,
            val_episodes: train.val_episodes,
            eval_every: train.eval_every,
            max_grad_norm: None,
            encoder: EncoderMode::Identity,
            gnn_layers: 1,
            activation: Activation::Identity,
            no_gnn_bias: false,
            wall_clock: false,
            identity_maps: false,
            relations: synth.num_relations,
            dim: synth.dim,
            cluster_scale: synth.cluster_scale,
            noise_scale: synth.noise_scale,
            instances: synth.instances_per_relation,
            embedding_noise: synth.embedding_noise,
            train_relations: synth.train_relations,
            val_relations: synth.val_relations,
            axis: SweepAxis::Chains,
            values: vec![1, 10],
            d: 3,
            cases: 20,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: Display,
{
    value.trim().parse().map_err(|e| format!("invalid value {value:?} for {key}: {e}"))
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, String>
where
    T::Err: Display,
{
    match value.trim() {
        "" | "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn show_opt<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "data" => self.data = path(value),
            "registry" => self.registry = path(value),
            "embeddings" => self.embeddings = path(value),
            "graph" => self.graph = path(value),
            "checkpoint" => self.checkpoint = path(value),
            "out" => self.out = path(value).ok_or("out must not be empty")?,
            "seed" => self.seed = parse(key, value)?,
            "n-way" => self.n_way = parse(key, value)?,
            "k-shot" => self.k_shot = parse(key, value)?,
            "q-per" => self.q_per = parse(key, value)?,
            "episodes" => self.episodes = parse(key, value)?,
            "chains" => self.chains = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "step-size" => self.step_size = parse(key, value)?,
            "step-decay" => self.step_decay = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "measure" => self.measure = parse(key, value)?,
            "knn" => self.knn = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "no-noise" => self.no_noise = parse(key, value)?,
            "no-graph-prior" => self.no_graph_prior = parse(key, value)?,
            "threads" => self.threads = optional(key, value)?,
            "format" => self.format = parse(key, value)?,
            "split" => self.split = parse(key, value)?,
            "val-episodes" => self.val_episodes = parse(key, value)?,
            "eval-every" => self.eval_every = parse(key, value)?,
            "max-grad-norm" => self.max_grad_norm = optional(key, value)?,
            "encoder" => self.encoder = parse(key, value)?,
            "gnn-layers" => self.gnn_layers = parse(key, value)?,
            "activation" => self.activation = parse(key, value)?,
            "no-gnn-bias" => self.no_gnn_bias = parse(key, value)?,
            "wall-clock" => self.wall_clock = parse(key, value)?,
            "identity-maps" => self.identity_maps = parse(key, value)?,
            "relations" => self.relations = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "cluster-scale" => self.cluster_scale = parse(key, value)?,
            "noise-scale" => self.noise_scale = parse(key, value)?,
            "instances" => self.instances = parse(key, value)?,
            "embedding-noise" => self.embedding_noise = parse(key, value)?,
            "train-relations" => self.train_relations = parse(key, value)?,
            "val-relations" => self.val_relations = parse(key, value)?,
            "axis" => self.axis = parse(key, value)?,
            "values" => {
                self.values = value
                    .split(',')
                    .filter(|v| !v.trim().is_empty())
                    .map(|v| parse(key, v))
                    .collect::<Result<_, _>>()?
            }
            "d" => self.d = parse(key, value)?,
            "cases" => self.cases = parse(key, value)?,
            other => return Err(format!("unknown config key {other:?}")),
        }
        Ok(())
    }

    /// All options as `(key, value)`, in [`OPTIONS`] order; feeding them back
    /// through [`RunConfig::set`] yields the same configuration.
    pub fn entries(&self) -> Vec<(String, String)> {
        let values = [
            show_path(&self.data),
            show_path(&self.registry),
            show_path(&self.embeddings),
            show_path(&self.graph),
            show_path(&self.checkpoint),
            self.out.display().to_string(),
            self.seed.to_string(),
            self.n_way.to_string(),
            self.k_shot.to_string(),
            self.q_per.to_string(),
            self.episodes.to_string(),
            self.chains.to_string(),
            self.steps.to_string(),
            self.step_size.to_string(),
            self.step_decay.to_string(),
            self.alpha.to_string(),
            self.beta.to_string(),
            self.tau.to_string(),
            self.measure.to_string(),
            self.knn.to_string(),
            self.lr.to_string(),
            self.no_noise.to_string(),
            self.no_graph_prior.to_string(),
            show_opt(&self.threads),
            self.format.to_string(),
            self.split.to_string(),
            self.val_episodes.to_string(),
            self.eval_every.to_string(),
            show_opt(&self.max_grad_norm),
            self.encoder.to_string(),
            self.gnn_layers.to_string(),
            self.activation.to_string(),
            self.no_gnn_bias.to_string(),
            self.wall_clock.to_string(),
            self.identity_maps.to_string(),
            self.relations.to_string(),
            self.dim.to_string(),
            self.cluster_scale.to_string(),
            self.noise_scale.to_string(),
            self.instances.to_string(),
            self.embedding_noise.to_string(),
            self.train_relations.to_string(),
            self.val_relations.to_string(),
            self.axis.to_string(),
            self.values.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            self.d.to_string(),
            self.cases.to_string(),
        ];
        OPTIONS
            .iter()
            .zip(values)
            .map(|((k, _, _), v)| (k.to_string(), v))
            .collect()
    }

    /// Applies `key=value` lines; blank lines and lines starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<(), String> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("{}:{}: expected key=value", origin.display(), i + 1))?;
            self.set(k.trim(), v)
                .map_err(|e| format!("{}:{}: {e}", origin.display(), i + 1))?;
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        self.apply_text(&text, path)
    }

    pub fn render(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            chains: self.chains,
            steps: self.steps,
            epsilon0: self.step_size,
            step_decay: self.step_decay,
            alpha: self.alpha,
            beta: self.beta,
            tau: self.tau,
            measure: self.measure,
            noise_enabled: !self.no_noise,
            graph_prior: !self.no_graph_prior,
            ..SamplerConfig::default()
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            encoder: self.encoder,
            gnn_layers: self.gnn_layers,
            activation: self.activation,
            gnn_bias: !self.no_gnn_bias,
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            num_relations: self.relations,
            dim: self.dim,
            cluster_scale: self.cluster_scale,
            noise_scale: self.noise_scale,
            instances_per_relation: self.instances,
            embedding_noise: self.embedding_noise,
            train_relations: self.train_relations,
            val_relations: self.val_relations,
        }
    }

    pub fn episode_spec(&self) -> EpisodeSpec {
        EpisodeSpec {
            split: self.split,
            n_way: self.n_way,
            k_shot: self.k_shot,
            q_per: self.q_per,
            episodes: self.episodes,
        }
    }

    pub fn train_config(&self, checkpoint: PathBuf) -> TrainConfig {
        TrainConfig {
            episodes: self.episodes,
            n_way: self.n_way,
            k_shot: self.k_shot,
            q_per: self.q_per,
            learning_rate: self.lr,
            max_grad_norm: self.max_grad_norm,
            sampler: self.sampler(),
            model: self.model_spec(),
            eval_every: self.eval_every,
            val_episodes: self.val_episodes,
            checkpoint_path: Some(checkpoint),
            seed: self.seed,
            record_wall_clock: self.wall_clock,
        }
    }
}
