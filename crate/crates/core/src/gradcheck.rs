//! Analytic and taped gradients against central differences on small random problems.

use rand::Rng;
use serde::Serialize;

use crate::data::{sample_episode, Split, SynthConfig, generate_synthetic};
use crate::error::{Error, Result};
use crate::graph::build_knn_graph;
use crate::likelihood::{support_log_likelihood_and_grad, Encoded, SimilarityMeasure};
use crate::numerics::{finite_difference_gradient, max_relative_error, Mat, RngStream};
use crate::prior::prior_log_density_and_grad;
use crate::sampler::SamplerConfig;
use crate::trainer::{episode_loss, episode_objective_and_grads, EncoderMode, ModelParams, ModelSpec};

pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheck {
    pub component: String,
    pub cases: usize,
    pub max_rel_error: f64,
}

fn random_mat(rng: &mut impl Rng, rows: usize, cols: usize) -> Mat<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect();
    Mat::new(rows, cols, data).expect("sized")
}

fn prior_case(stream: &RngStream, d: usize) -> Result<f64> {
    let mut rng = stream.rng();
    let n = rng.random_range(1..=4);
    let v = random_mat(&mut rng, n, d);
    let h = random_mat(&mut rng, n, d);
    let (_, grad) = prior_log_density_and_grad(&v, &h)?;
    let fd = finite_difference_gradient(
        |x| {
            let v = Mat::new(n, d, x.to_vec()).expect("sized");
            prior_log_density_and_grad(&v, &h).map_or(f64::NAN, |(lp, _)| lp)
        },
        v.as_slice(),
        FD_STEP,
    )?;
    Ok(max_relative_error(grad.as_slice(), &fd))
}

fn likelihood_case(stream: &RngStream, d: usize, measure: SimilarityMeasure) -> Result<f64> {
    let mut rng = stream.rng();
    let n = rng.random_range(2..=4);
    let k = rng.random_range(1..=3);
    let tau = rng.random_range(0.5..2.0);
    let support: Vec<Encoded> = (0..n * k)
        .map(|i| Encoded {
            slot: i % n,
            encoding: (0..d).map(|_| rng.random_range(-1.5..1.5)).collect(),
        })
        .collect();
    let v = random_mat(&mut rng, n, d);
    let (_, grad) = support_log_likelihood_and_grad(&support, &v, measure, tau, true)?;
    let fd = finite_difference_gradient(
        |x| {
            let v = Mat::new(n, d, x.to_vec()).expect("sized");
            support_log_likelihood_and_grad(&support, &v, measure, tau, true).map_or(f64::NAN, |(ll, _)| ll)
        },
        v.as_slice(),
        FD_STEP,
    )?;
    Ok(max_relative_error(grad.as_slice(), &fd))
}

/// Full episode objective with a linear encoder and a biased graph layer,
/// N = 2, K = 1, L = 2, M = 2.
fn objective_case(stream: &RngStream, d: usize, measure: SimilarityMeasure) -> Result<f64> {
    let mut rng = stream.rng();
    let synth = SynthConfig {
        num_relations: 5,
        dim: d,
        cluster_scale: 1.0,
        noise_scale: 0.5,
        instances_per_relation: 4,
        embedding_noise: 0.3,
        train_relations: 5,
        val_relations: 0,
    };
    let (dataset, embeddings) = generate_synthetic(&synth, &stream.fork(0))?;
    let graph = build_knn_graph(&embeddings, 2)?;
    let episode = sample_episode(&dataset, Split::Train, 2, 1, 2, &stream.fork(1))?;
    let spec = ModelSpec {
        encoder: EncoderMode::Linear,
        ..ModelSpec::default()
    };
    let params = ModelParams::init(&spec, d, d, &stream.fork(2))?;
    let config = SamplerConfig {
        chains: 2,
        steps: 2,
        tau: rng.random_range(0.5..2.0),
        measure,
        ..SamplerConfig::default()
    };
    let chain_stream = stream.fork(3);
    let (_, grads) = episode_objective_and_grads(&episode, &graph, &params, &config, &chain_stream)?;
    let fd = finite_difference_gradient(
        |x| {
            params
                .with_values(x)
                .and_then(|p| episode_loss(&episode, &graph, &p, &config, &chain_stream))
                .unwrap_or(f64::NAN)
        },
        &params.flatten(),
        FD_STEP,
    )?;
    Ok(max_relative_error(&grads.flatten(), &fd))
}

/// Runs `cases` random problems per component and reports the worst error of
/// each. Case `i` uses dimension `dims[i % dims.len()]`.
pub fn gradient_check_suite(cases: usize, seed: u64, dims: &[usize]) -> Result<Vec<GradCheck>> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::InvalidArgument("dimensions must be non-empty and positive".into()));
    }
    type Case = fn(&RngStream, usize) -> Result<f64>;
    let components: [(&str, Case); 5] = [
        ("prior", prior_case),
        ("support_likelihood_dot", |s, d| likelihood_case(s, d, SimilarityMeasure::Dot)),
        ("support_likelihood_euclidean", |s, d| likelihood_case(s, d, SimilarityMeasure::Euclidean)),
        ("episode_objective_dot", |s, d| objective_case(s, d, SimilarityMeasure::Dot)),
        ("episode_objective_euclidean", |s, d| objective_case(s, d, SimilarityMeasure::Euclidean)),
    ];
    components
        .iter()
        .enumerate()
        .map(|(c, (name, run))| {
            let base = RngStream::new(seed, c as u64);
            let mut worst = 0.0f64;
            for i in 0..cases {
                worst = worst.max(run(&base.fork(i as u64), dims[i % dims.len()])?);
            }
            Ok(GradCheck {
                component: name.to_string(),
                cases,
                max_rel_error: worst,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_is_tight() {
        for check in gradient_check_suite(4, 11, &[1, 2, 3, 4]).unwrap() {
            assert!(check.max_rel_error < 1e-4, "{check:?}");
        }
    }
}
