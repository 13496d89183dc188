//! Episodic evaluation, sensitivity sweeps and report files.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_episode, Dataset, Episode, Split};
use crate::error::{Error, Result};
use crate::graph::RelationGraph;
use crate::likelihood::{encode, SimilarityMeasure};
use crate::numerics::{Mat, RngStream};
use crate::prior::relation_summaries;
use crate::sampler::{predict_queries, PrototypeSamples, SamplerConfig};
use crate::trainer::{episode_posterior, episode_streams, ModelParams};

/// Shape of the evaluation episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub split: Split,
    pub n_way: usize,
    pub k_shot: usize,
    pub q_per: usize,
    pub episodes: usize,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        EpisodeSpec {
            split: Split::Test,
            n_way: 5,
            k_shot: 1,
            q_per: 5,
            episodes: 200,
        }
    }
}

/// Everything that identifies one row of a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSetting {
    pub setting: String,
    pub n_way: usize,
    pub k_shot: usize,
    pub chains: usize,
    pub steps: usize,
    pub epsilon0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub measure: SimilarityMeasure,
    pub episodes: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub correct: usize,
    pub total: usize,
}

impl EpisodeRecord {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: EvalSetting,
    /// Mean of per-episode accuracies.
    pub accuracy: f64,
    /// Half-width of the normal 95% interval over episodes.
    pub ci95: f64,
    pub per_episode: Vec<EpisodeRecord>,
}

/// Mean and 95% half-width `1.96 · sd / √n`, with the sample standard deviation.
pub fn mean_and_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * var.sqrt() / (n as f64).sqrt())
}

fn report(setting: EvalSetting, per_episode: Vec<EpisodeRecord>) -> EvalReport {
    let accs: Vec<f64> = per_episode.iter().map(EpisodeRecord::accuracy).collect();
    let (accuracy, ci95) = mean_and_ci95(&accs);
    EvalReport {
        setting,
        accuracy,
        ci95,
        per_episode,
    }
}

fn all_summaries(graph: &RelationGraph, params: &ModelParams, config: &SamplerConfig) -> Result<Mat<f64>> {
    if config.graph_prior {
        relation_summaries(graph, &params.gnn)
    } else {
        Ok(Mat::zeros(graph.num_nodes(), params.dim()))
    }
}

fn check_inputs(dataset: &Dataset, graph: &RelationGraph, params: &ModelParams, spec: &EpisodeSpec) -> Result<()> {
    params.check_dims(dataset.dim(), graph)?;
    if dataset.id_bound() > graph.num_nodes() {
        return Err(Error::ShapeMismatch(format!(
            "graph has {} nodes but the dataset uses relation ids up to {}",
            graph.num_nodes(),
            dataset.id_bound() - 1
        )));
    }
    if spec.n_way == 0 || spec.q_per == 0 {
        return Err(Error::InvalidArgument("n_way and q_per must be positive".into()));
    }
    dataset.check_episode_shape(spec.split, spec.n_way, spec.k_shot + spec.q_per)
}

fn score(
    episode: &Episode,
    samples: &PrototypeSamples<f64>,
    params: &ModelParams,
    config: &SamplerConfig,
) -> Result<(usize, usize)> {
    let queries = episode
        .query
        .iter()
        .map(|q| encode(&q.features, &params.encoder))
        .collect::<Result<Vec<_>>>()?;
    let preds = predict_queries(&queries, samples, &episode.targets, config.measure, config.tau)?;
    let correct = preds
        .iter()
        .zip(&episode.query)
        .filter(|(p, q)| p.slot == q.slot)
        .count();
    Ok((correct, episode.query.len()))
}

fn setting(label: &str, spec: &EpisodeSpec, config: &SamplerConfig, stream: &RngStream) -> EvalSetting {
    EvalSetting {
        setting: label.to_string(),
        n_way: spec.n_way,
        k_shot: spec.k_shot,
        chains: config.chains,
        steps: config.steps,
        epsilon0: config.epsilon0,
        alpha: config.alpha,
        beta: config.beta,
        measure: config.measure,
        episodes: spec.episodes,
        seed: stream.seed,
    }
}

/// Few-shot accuracy with chain-averaged predictions. Episodes run in
/// parallel; each draws from its own fork of `stream`, so results do not
/// depend on the thread count.
pub fn evaluate_fewshot(
    dataset: &Dataset,
    graph: &RelationGraph,
    params: &ModelParams,
    spec: &EpisodeSpec,
    config: &SamplerConfig,
    stream: &RngStream,
) -> Result<EvalReport> {
    evaluate_fewshot_labeled("few-shot", dataset, graph, params, spec, config, stream)
}

fn evaluate_fewshot_labeled(
    label: &str,
    dataset: &Dataset,
    graph: &RelationGraph,
    params: &ModelParams,
    spec: &EpisodeSpec,
    config: &SamplerConfig,
    stream: &RngStream,
) -> Result<EvalReport> {
    config.validate()?;
    if spec.k_shot == 0 {
        return Err(Error::InvalidArgument("few-shot evaluation needs k_shot >= 1".into()));
    }
    check_inputs(dataset, graph, params, spec)?;
    let summaries = all_summaries(graph, params, config)?;
    let records = (0..spec.episodes)
        .into_par_iter()
        .map(|i| {
            let run = || -> Result<EpisodeRecord> {
                let (task, chains) = episode_streams(stream, i);
                let ep = sample_episode(dataset, spec.split, spec.n_way, spec.k_shot, spec.q_per, &task)?;
                let rows: Vec<usize> = ep.targets.iter().map(|r| r.index()).collect();
                let h = summaries.select_rows(&rows);
                let (samples, _) = episode_posterior(&ep, &h, &params.encoder, config, &chains)?;
                let (correct, total) = score(&ep, &samples, params, config)?;
                Ok(EpisodeRecord { episode: i, correct, total })
            };
            run().map_err(|e| Error::Episode { episode: i, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(report(setting(label, spec, config, stream), records))
}

/// Accuracy with the graph summaries alone as prototypes; `spec.k_shot` is ignored.
pub fn evaluate_zeroshot(
    dataset: &Dataset,
    graph: &RelationGraph,
    params: &ModelParams,
    spec: &EpisodeSpec,
    config: &SamplerConfig,
    stream: &RngStream,
) -> Result<EvalReport> {
    config.validate()?;
    let spec = EpisodeSpec { k_shot: 0, ..spec.clone() };
    check_inputs(dataset, graph, params, &spec)?;
    let summaries = all_summaries(graph, params, config)?;
    let records = (0..spec.episodes)
        .into_par_iter()
        .map(|i| {
            let run = || -> Result<EpisodeRecord> {
                let (task, _) = episode_streams(stream, i);
                let ep = sample_episode(dataset, spec.split, spec.n_way, 0, spec.q_per, &task)?;
                let rows: Vec<usize> = ep.targets.iter().map(|r| r.index()).collect();
                let samples = PrototypeSamples::point(summaries.select_rows(&rows));
                let (correct, total) = score(&ep, &samples, params, config)?;
                Ok(EpisodeRecord { episode: i, correct, total })
            };
            run().map_err(|e| Error::Episode { episode: i, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut s = setting("zero-shot", &spec, config, stream);
    s.chains = 1;
    s.steps = 0;
    Ok(report(s, records))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// Number of chains, L.
    Chains,
    /// Steps per chain, M.
    Steps,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Chains => "chains",
            SweepAxis::Steps => "steps",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chains" | "L" => Ok(SweepAxis::Chains),
            "steps" | "M" => Ok(SweepAxis::Steps),
            other => Err(Error::InvalidArgument(format!("unknown sweep axis {other:?}"))),
        }
    }
}

/// Few-shot accuracy for each value of one sampler setting. Every value sees
/// the same episodes.
#[allow(clippy::too_many_arguments)]
pub fn sensitivity_sweep(
    axis: SweepAxis,
    values: &[usize],
    dataset: &Dataset,
    graph: &RelationGraph,
    params: &ModelParams,
    spec: &EpisodeSpec,
    base: &SamplerConfig,
    stream: &RngStream,
) -> Result<Vec<EvalReport>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            match axis {
                SweepAxis::Chains => cfg.chains = v,
                SweepAxis::Steps => cfg.steps = v,
            }
            evaluate_fewshot_labeled(&format!("sweep-{axis}"), dataset, graph, params, spec, &cfg, stream)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        })
    }
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidArgument(format!("unknown report format {other:?}"))),
        }
    }
}

/// One CSV row of a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub setting: String,
    #[serde(rename = "N")]
    pub n_way: usize,
    #[serde(rename = "K")]
    pub k_shot: usize,
    #[serde(rename = "L")]
    pub chains: usize,
    #[serde(rename = "M")]
    pub steps: usize,
    pub epsilon0: String,
    pub alpha: String,
    pub beta: String,
    pub measure: SimilarityMeasure,
    pub episodes: usize,
    pub accuracy: String,
    pub ci95: String,
    pub seed: u64,
}

fn fixed6(x: f64) -> String {
    format!("{x:.6}")
}

fn round6(x: f64) -> f64 {
    fixed6(x).parse().unwrap_or(x)
}

impl From<&EvalReport> for ReportRow {
    fn from(r: &EvalReport) -> Self {
        let s = &r.setting;
        ReportRow {
            setting: s.setting.clone(),
            n_way: s.n_way,
            k_shot: s.k_shot,
            chains: s.chains,
            steps: s.steps,
            epsilon0: fixed6(s.epsilon0),
            alpha: fixed6(s.alpha),
            beta: fixed6(s.beta),
            measure: s.measure,
            episodes: s.episodes,
            accuracy: fixed6(r.accuracy),
            ci95: fixed6(r.ci95),
            seed: s.seed,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonReport {
    config: BTreeMap<String, String>,
    reports: Vec<EvalReport>,
}

/// Writes reports as CSV (config echo in leading `#` lines) or JSON.
/// Floats are fixed to 6 decimals in both.
pub fn emit_report(reports: &[EvalReport], path: &Path, format: ReportFormat, echo: &[(String, String)]) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::NothingToEmit);
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    match format {
        ReportFormat::Csv => {
            let mut out = String::new();
            for (k, v) in echo {
                out.push_str(&format!("# {k}={v}\n"));
            }
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in reports {
                w.serialize(ReportRow::from(r)).map_err(|e| Error::Csv {
                    path: path.to_path_buf(),
                    source: e,
                })?;
            }
            let body = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
            out.push_str(&String::from_utf8_lossy(&body));
            fs::write(path, out).map_err(|e| Error::io(path, e))
        }
        ReportFormat::Json => {
            let rounded: Vec<EvalReport> = reports
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    r.accuracy = round6(r.accuracy);
                    r.ci95 = round6(r.ci95);
                    r.setting.epsilon0 = round6(r.setting.epsilon0);
                    r.setting.alpha = round6(r.setting.alpha);
                    r.setting.beta = round6(r.setting.beta);
                    r
                })
                .collect();
            let doc = JsonReport {
                config: echo.iter().cloned().collect(),
                reports: rounded,
            };
            let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Json {
                path: path.to_path_buf(),
                source: e,
            })?;
            fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
        }
    }
}

/// Reads the rows of a CSV report, skipping the `#` echo lines.
pub fn read_report_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
    reader
        .deserialize()
        .map(|row| {
            row.map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                source: e,
            })
        })
        .collect()
}

/// Reads the reports of a JSON report file.
pub fn read_report_json(path: &Path) -> Result<Vec<EvalReport>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: JsonReport = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(doc.reports)
}
