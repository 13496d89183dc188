//! Posterior sampling of prototypes with stochastic gradient Langevin
//! dynamics, warm-started from support statistics and graph summaries, and
//! Monte Carlo prediction over the resulting chains.

use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::data::RelationId;
use crate::error::{Error, Result};
use crate::likelihood::{class_log_probs, shots_per_class, support_log_likelihood_and_grad, Encoded, SimilarityMeasure};
use crate::numerics::{standard_normal_sample, Mat, RngStream};
use crate::prior::prior_log_density_and_grad;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Independent chains (Monte Carlo samples).
    pub chains: usize,
    /// Langevin steps per chain.
    pub steps: usize,
    pub epsilon0: f64,
    /// Step size at step `t` is `epsilon0 · t^-step_decay`.
    pub step_decay: f64,
    /// Weight on the graph summary in the warm start.
    pub alpha: f64,
    /// Weight on the grand support mean in the warm start.
    pub beta: f64,
    pub tau: f64,
    pub measure: SimilarityMeasure,
    pub noise_enabled: bool,
    /// When off, prior means are zero and `alpha` is ignored.
    pub graph_prior: bool,
    pub prior_weight: f64,
    pub likelihood_weight: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 10,
            steps: 5,
            epsilon0: 0.1,
            step_decay: 0.0,
            alpha: 1.0,
            beta: 1.0,
            tau: 10.0,
            measure: SimilarityMeasure::Dot,
            noise_enabled: true,
            graph_prior: true,
            prior_weight: 1.0,
            likelihood_weight: 1.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.chains == 0 {
            return fail("at least one chain is required");
        }
        if !(self.epsilon0 > 0.0) {
            return fail("initial step size must be positive");
        }
        if !(self.tau > 0.0) {
            return fail("temperature must be positive");
        }
        if ![self.step_decay, self.alpha, self.beta, self.prior_weight, self.likelihood_weight]
            .iter()
            .all(|x| x.is_finite())
        {
            return fail("sampler weights must be finite");
        }
        Ok(())
    }

    pub fn step_size(&self, step: usize) -> f64 {
        self.epsilon0 * (step as f64).powf(-self.step_decay)
    }

    /// Warm-start weight on the prior mean; zero without the graph prior.
    pub fn effective_alpha(&self) -> f64 {
        if self.graph_prior {
            self.alpha
        } else {
            0.0
        }
    }
}

/// Per-class and grand means of the support encodings.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportStatistics<S = f64> {
    pub class_means: Mat<S>,
    pub grand_mean: Vec<S>,
}

pub fn support_statistics<S: Scalar>(support: &[Encoded<S>], n: usize) -> Result<SupportStatistics<S>> {
    if support.is_empty() {
        return Err(Error::InvalidArgument("support set is empty".into()));
    }
    let k = shots_per_class(support, n)?;
    let d = support[0].encoding.len();
    if support.iter().any(|s| s.encoding.len() != d) {
        return Err(Error::ShapeMismatch("support encodings differ in dimension".into()));
    }
    let mut class_means = Mat::zeros(n, d);
    let mut grand_mean = vec![S::zero(); d];
    for item in support {
        let row = class_means.row_mut(item.slot);
        for j in 0..d {
            row[j] = row[j] + item.encoding[j];
            grand_mean[j] = grand_mean[j] + item.encoding[j];
        }
    }
    for x in class_means.as_mut_slice() {
        *x = *x / k as f64;
    }
    let total = support.len() as f64;
    for x in &mut grand_mean {
        *x = *x / total;
    }
    Ok(SupportStatistics {
        class_means,
        grand_mean,
    })
}

/// `chains` parallel prototype matrices, each with its own noise stream.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSamples<S = f64> {
    pub chains: Vec<Mat<S>>,
    pub streams: Vec<RngStream>,
}

impl<S: Scalar> PrototypeSamples<S> {
    /// A single noise-free chain, e.g. the prior means for zero-shot prediction.
    pub fn point(prototypes: Mat<S>) -> Self {
        PrototypeSamples {
            chains: vec![prototypes],
            streams: vec![RngStream::new(0, 0)],
        }
    }

    pub fn num_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn values(&self) -> PrototypeSamples<f64> {
        PrototypeSamples {
            chains: self.chains.iter().map(Mat::values).collect(),
            streams: self.streams.clone(),
        }
    }
}

/// Every chain starts at `v_r = m_r + alpha·h_r - beta·m`.
pub fn init_prototypes<S: Scalar>(
    stats: &SupportStatistics<S>,
    summaries: &Mat<S>,
    alpha: f64,
    beta: f64,
    chains: usize,
    stream: &RngStream,
) -> Result<PrototypeSamples<S>> {
    if stats.class_means.shape() != summaries.shape() {
        return Err(Error::ShapeMismatch(format!(
            "support means {:?} vs summaries {:?}",
            stats.class_means.shape(),
            summaries.shape()
        )));
    }
    let mut init = stats.class_means.clone();
    for i in 0..init.rows() {
        let h = summaries.row(i);
        let row = init.row_mut(i);
        for j in 0..row.len() {
            row[j] = row[j] + h[j] * alpha - stats.grand_mean[j] * beta;
        }
    }
    Ok(PrototypeSamples {
        chains: vec![init; chains],
        streams: (0..chains as u64).map(|l| stream.fork(l)).collect(),
    })
}

/// Runs `config.steps` Langevin updates on every chain:
/// `v ← v + (ε_t/2)·∇[log p(y_S | x_S, v) + log p(v | h)] + √ε_t·z`.
///
/// The support term is scaled by `1/K`. Noise for relation `targets[r]` in
/// chain `l` is read from `samples.streams[l].fork(targets[r])`, so draws
/// follow relations rather than their position in the episode.
pub fn sgld_chain<S: Scalar>(
    support: &[Encoded<S>],
    summaries: &Mat<S>,
    targets: &[RelationId],
    samples: PrototypeSamples<S>,
    config: &SamplerConfig,
) -> Result<PrototypeSamples<S>> {
    let PrototypeSamples { chains, streams } = samples;
    if chains.len() != streams.len() {
        return Err(Error::ShapeMismatch("one noise stream per chain is required".into()));
    }
    let steps = config.steps;
    let mut out = Vec::with_capacity(chains.len());
    for (l, (mut v, stream)) in chains.into_iter().zip(&streams).enumerate() {
        if v.shape() != summaries.shape() || v.rows() != targets.len() {
            return Err(Error::ShapeMismatch(format!(
                "chain {l} has shape {:?}, summaries {:?}, {} targets",
                v.shape(),
                summaries.shape(),
                targets.len()
            )));
        }
        let d = v.cols();
        let noise: Vec<Vec<f64>> = if config.noise_enabled {
            targets
                .iter()
                .map(|r| standard_normal_sample(&[steps, d], &stream.fork(r.0 as u64)))
                .collect()
        } else {
            Vec::new()
        };
        for t in 1..=steps {
            let eps = config.step_size(t);
            let mut drift = prior_log_density_and_grad(&v, summaries)?.1;
            for g in drift.as_mut_slice() {
                *g = *g * config.prior_weight;
            }
            if config.likelihood_weight != 0.0 && !support.is_empty() {
                let (_, lik) = support_log_likelihood_and_grad(support, &v, config.measure, config.tau, true)?;
                for (g, &x) in drift.as_mut_slice().iter_mut().zip(lik.as_slice()) {
                    *g = *g + x * config.likelihood_weight;
                }
            }
            let noise_scale = eps.sqrt();
            #[allow(clippy::needless_range_loop)]
            for r in 0..v.rows() {
                let row = v.row_mut(r);
                for j in 0..d {
                    let mut x = row[j] + drift.get(r, j) * (eps / 2.0);
                    if config.noise_enabled {
                        x = x + noise_scale * noise[r][(t - 1) * d + j];
                    }
                    row[j] = x;
                }
            }
            if !v.all_finite() {
                return Err(Error::SamplerDiverged { chain: l, step: t });
            }
        }
        out.push(v);
    }
    Ok(PrototypeSamples {
        chains: out,
        streams,
    })
}

/// `log((1/L) Σ_l exp(x_l))` without overflow.
pub fn log_mean_exp<S: Scalar>(xs: &[S]) -> S {
    let max = xs.iter().map(|x| x.value()).fold(f64::NEG_INFINITY, f64::max);
    let mut sum = S::zero();
    for &x in xs {
        sum = sum + (x - max).exp();
    }
    sum.ln() + (max - (xs.len() as f64).ln())
}

/// Per-class log of the chain-averaged softmax probability for one query.
pub fn mc_class_log_probs<S: Scalar>(
    encoding: &[S],
    samples: &PrototypeSamples<S>,
    measure: SimilarityMeasure,
    tau: f64,
) -> Result<Vec<S>> {
    let per_chain = samples
        .chains
        .iter()
        .map(|v| class_log_probs(encoding, v, measure, tau))
        .collect::<Result<Vec<_>>>()?;
    let n = per_chain.first().ok_or(Error::EmptyClassSet)?.len();
    Ok((0..n)
        .map(|r| {
            let column: Vec<S> = per_chain.iter().map(|lp| lp[r]).collect();
            log_mean_exp(&column)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryPrediction {
    /// Chain-averaged class probabilities, in target order.
    pub probs: Vec<f64>,
    /// Slot of the most probable target.
    pub slot: usize,
}

/// Highest probability wins; ties go to the lower relation id.
pub fn predicted_slot(probs: &[f64], targets: &[RelationId]) -> usize {
    let mut best = 0;
    for r in 1..probs.len() {
        if probs[r] > probs[best] || (probs[r] == probs[best] && targets[r] < targets[best]) {
            best = r;
        }
    }
    best
}

/// Averages softmax probabilities over chains and picks the most probable target.
pub fn predict_queries(
    queries: &[Vec<f64>],
    samples: &PrototypeSamples<f64>,
    targets: &[RelationId],
    measure: SimilarityMeasure,
    tau: f64,
) -> Result<Vec<QueryPrediction>> {
    if samples.chains.is_empty() {
        return Err(Error::InvalidArgument("no prototype samples".into()));
    }
    let inv = 1.0 / samples.chains.len() as f64;
    queries
        .iter()
        .map(|q| {
            let mut probs = vec![0.0; targets.len()];
            for v in &samples.chains {
                let lp = class_log_probs(q, v, measure, tau)?;
                if lp.len() != probs.len() {
                    return Err(Error::ShapeMismatch("prototype rows differ from targets".into()));
                }
                for (p, l) in probs.iter_mut().zip(lp) {
                    *p += l.exp() * inv;
                }
            }
            let slot = predicted_slot(&probs, targets);
            Ok(QueryPrediction { probs, slot })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn enc(slot: usize, e: Vec<f64>) -> Encoded {
        Encoded { slot, encoding: e }
    }

    #[test]
    fn statistics_single_and_pair() {
        let s = support_statistics(&[enc(0, vec![1.0, 2.0])], 1).unwrap();
        assert_eq!(s.class_means.row(0), &[1.0, 2.0]);
        assert_eq!(s.grand_mean, vec![1.0, 2.0]);

        let s = support_statistics(&[enc(0, vec![1.0, 2.0]), enc(1, vec![3.0, -2.0])], 2).unwrap();
        assert_eq!(s.class_means.row(0), &[1.0, 2.0]);
        assert_eq!(s.class_means.row(1), &[3.0, -2.0]);
        assert_eq!(s.grand_mean, vec![2.0, 0.0]);

        let dup = [enc(0, vec![1.0, 2.0]), enc(1, vec![3.0, -2.0]), enc(0, vec![1.0, 2.0]), enc(1, vec![3.0, -2.0])];
        assert_eq!(support_statistics(&dup, 2).unwrap(), s);

        assert!(support_statistics::<f64>(&[], 2).is_err());
    }

    #[test]
    fn init_hand_cases() {
        let stream = RngStream::new(0, 0);
        // N = 1 with alpha = beta = 1 lands on the summary.
        let s = support_statistics(&[enc(0, vec![4.0, -1.0])], 1).unwrap();
        let h = Mat::from_rows(vec![vec![0.5, 0.25]]).unwrap();
        let p = init_prototypes(&s, &h, 1.0, 1.0, 3, &stream).unwrap();
        assert_eq!(p.num_chains(), 3);
        for c in &p.chains {
            assert_eq!(c.row(0), &[0.5, 0.25]);
        }

        // d = 1, m_r = (2, 0), m = 1, h = (1, 1).
        let s = support_statistics(&[enc(0, vec![2.0]), enc(1, vec![0.0])], 2).unwrap();
        let h = Mat::from_rows(vec![vec![1.0], vec![1.0]]).unwrap();
        let p = init_prototypes(&s, &h, 1.0, 1.0, 1, &stream).unwrap();
        assert_eq!(p.chains[0].as_slice(), &[2.0, 0.0]);

        let p = init_prototypes(&s, &h, 0.0, 0.0, 1, &stream).unwrap();
        assert_eq!(p.chains[0], s.class_means);
    }

    #[test]
    fn zero_step_is_identity() {
        let support = vec![enc(0, vec![1.0, 0.5]), enc(1, vec![-1.0, 2.0])];
        let h = Mat::from_rows(vec![vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap();
        let targets = [RelationId(3), RelationId(5)];
        let s = support_statistics(&support, 2).unwrap();
        let init = init_prototypes(&s, &h, 1.0, 1.0, 2, &RngStream::new(1, 0)).unwrap();
        let cfg = SamplerConfig {
            epsilon0: 1.0,
            step_decay: 0.0,
            steps: 0,
            ..SamplerConfig::default()
        };
        let out = sgld_chain(&support, &h, &targets, init.clone(), &cfg).unwrap();
        assert_eq!(out, init);
    }

    #[test]
    fn prior_gradient_flow_contracts_monotonically() {
        let h = Mat::from_rows(vec![vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let targets = [RelationId(0), RelationId(1)];
        let mut v = PrototypeSamples {
            chains: vec![Mat::from_rows(vec![vec![6.0, 4.0], vec![-3.0, -1.0]]).unwrap()],
            streams: vec![RngStream::new(0, 0)],
        };
        let cfg = SamplerConfig {
            steps: 1,
            epsilon0: 0.01,
            noise_enabled: false,
            likelihood_weight: 0.0,
            ..SamplerConfig::default()
        };
        let dist = |v: &PrototypeSamples| crate::numerics::squared_distance(v.chains[0].as_slice(), h.as_slice());
        let mut last = dist(&v);
        for _ in 0..2000 {
            v = sgld_chain(&[], &h, &targets, v, &cfg).unwrap();
            let now = dist(&v);
            assert!(now < last);
            last = now;
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn replayable_chains() {
        let support = vec![enc(0, vec![1.0, 0.5]), enc(1, vec![-1.0, 2.0])];
        let h = Mat::from_rows(vec![vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap();
        let targets = [RelationId(0), RelationId(1)];
        let s = support_statistics(&support, 2).unwrap();
        let run = || {
            let init = init_prototypes(&s, &h, 1.0, 1.0, 4, &RngStream::new(8, 2)).unwrap();
            sgld_chain(&support, &h, &targets, init, &SamplerConfig::default()).unwrap()
        };
        let (a, b) = (run(), run());
        let bits = |p: &PrototypeSamples| -> Vec<u64> { p.chains.iter().flat_map(|c| c.as_slice().iter().map(|x| x.to_bits())).collect() };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(a.chains[0], a.chains[1]);
    }

    #[test]
    fn divergence_is_reported() {
        let support = vec![enc(0, vec![1e300, 1e300]), enc(1, vec![-1e300, 1e300])];
        let h = Mat::from_rows(vec![vec![1e300, 0.0], vec![0.0, 1e300]]).unwrap();
        let init = PrototypeSamples {
            chains: vec![Mat::from_rows(vec![vec![1e300, -1e300], vec![-1e300, 1e300]]).unwrap()],
            streams: vec![RngStream::new(0, 0)],
        };
        let cfg = SamplerConfig { epsilon0: 1e10, ..SamplerConfig::default() };
        let err = sgld_chain(&support, &h, &[RelationId(0), RelationId(1)], init, &cfg).unwrap_err();
        assert!(matches!(err, Error::SamplerDiverged { chain: 0, step: 1 }));
    }

    #[test]
    fn identical_chains_match_single_chain() {
        let v = Mat::from_rows(vec![vec![0.4, -0.1], vec![1.0, 0.3], vec![-0.5, 0.8]]).unwrap();
        let targets = [RelationId(0), RelationId(1), RelationId(2)];
        let single = PrototypeSamples::point(v.clone());
        let many = PrototypeSamples {
            chains: vec![v; 5],
            streams: vec![RngStream::new(0, 0); 5],
        };
        let q = vec![vec![1.0, 2.0], vec![-3.0, 0.5]];
        let a = predict_queries(&q, &single, &targets, SimilarityMeasure::Dot, 1.0).unwrap();
        let b = predict_queries(&q, &many, &targets, SimilarityMeasure::Dot, 1.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.slot, y.slot);
            for (p, q) in x.probs.iter().zip(&y.probs) {
                assert!((p - q).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_chain_hand_average() {
        // d = 1, query encoding 1, tau = 1. Chain A prototypes (1, 0), chain B (0, 1).
        let a = Mat::from_rows(vec![vec![1.0], vec![0.0]]).unwrap();
        let b = Mat::from_rows(vec![vec![0.0], vec![1.0]]).unwrap();
        let samples = PrototypeSamples { chains: vec![a, b], streams: vec![RngStream::new(0, 0); 2] };
        let targets = [RelationId(7), RelationId(2)];
        let pred = predict_queries(&[vec![1.0]], &samples, &targets, SimilarityMeasure::Dot, 1.0).unwrap();
        let e = std::f64::consts::E;
        let pa = e / (1.0 + e);
        let pb = 1.0 / (1.0 + e);
        assert!((pred[0].probs[0] - 0.5 * (pa + pb)).abs() < 1e-15);
        assert!((pred[0].probs[1] - 0.5 * (pb + pa)).abs() < 1e-15);
        // Exact tie resolves to the lower relation id, which sits in slot 1.
        assert_eq!(pred[0].slot, 1);
    }

    #[test]
    fn averaged_probs_normalized_and_match_log_path() {
        let mut rng = RngStream::new(5, 0).rng();
        let chains: Vec<Mat> = (0..4)
            .map(|_| Mat::new(3, 2, (0..6).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap())
            .collect();
        let samples = PrototypeSamples { chains, streams: vec![RngStream::new(0, 0); 4] };
        let targets = [RelationId(0), RelationId(1), RelationId(2)];
        let q = vec![0.7, -1.9];
        let pred = predict_queries(std::slice::from_ref(&q), &samples, &targets, SimilarityMeasure::Euclidean, 2.0).unwrap();
        assert!((pred[0].probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let lp = mc_class_log_probs(&q, &samples, SimilarityMeasure::Euclidean, 2.0).unwrap();
        for (p, l) in pred[0].probs.iter().zip(lp) {
            assert!((p - l.exp()).abs() < 1e-14);
        }
    }
}
