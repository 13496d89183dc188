//! Instance encoding and the tempered softmax likelihood of labels given
//! prototypes, under dot-product or Euclidean similarity.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::data::{LabeledInstance, RelationId};
use crate::error::{Error, Result};
use crate::numerics::{dot, log_softmax, squared_distance, Mat, RngStream};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMeasure {
    #[default]
    Dot,
    Euclidean,
}

impl fmt::Display for SimilarityMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimilarityMeasure::Dot => "dot",
            SimilarityMeasure::Euclidean => "euclidean",
        })
    }
}

impl FromStr for SimilarityMeasure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(SimilarityMeasure::Dot),
            "euclidean" => Ok(SimilarityMeasure::Euclidean),
            other => Err(Error::InvalidArgument(format!(
                "unknown similarity measure {other:?} (expected dot or euclidean)"
            ))),
        }
    }
}

/// Maps input features to the prototype space.
#[derive(Clone, Debug, PartialEq)]
pub enum EncoderParams<S = f64> {
    Identity { dim: usize },
    /// `features · weight + bias` with `weight` of shape `d_in × d`.
    Linear { weight: Mat<S>, bias: Vec<S> },
}

impl<S: Copy> EncoderParams<S> {
    pub fn check_structure(&self) -> Result<()> {
        match self {
            EncoderParams::Identity { dim: 0 } => Err(Error::InvalidArgument("encoder dimension is zero".into())),
            EncoderParams::Linear { weight, bias } if bias.len() != weight.cols() => Err(Error::ShapeMismatch(
                format!("encoder bias of length {} for width {}", bias.len(), weight.cols()),
            )),
            _ => Ok(()),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            EncoderParams::Identity { dim } => *dim,
            EncoderParams::Linear { weight, .. } => weight.rows(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            EncoderParams::Identity { dim } => *dim,
            EncoderParams::Linear { weight, .. } => weight.cols(),
        }
    }

    pub fn num_values(&self) -> usize {
        match self {
            EncoderParams::Identity { .. } => 0,
            EncoderParams::Linear { weight, bias } => weight.as_slice().len() + bias.len(),
        }
    }

    pub fn flatten(&self) -> Vec<S> {
        match self {
            EncoderParams::Identity { .. } => Vec::new(),
            EncoderParams::Linear { weight, bias } => {
                weight.as_slice().iter().chain(bias).copied().collect()
            }
        }
    }

    pub fn with_values<T: Copy>(&self, values: &[T]) -> Result<EncoderParams<T>> {
        if values.len() != self.num_values() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} encoder parameters",
                values.len(),
                self.num_values()
            )));
        }
        Ok(match self {
            EncoderParams::Identity { dim } => EncoderParams::Identity { dim: *dim },
            EncoderParams::Linear { weight, .. } => {
                let (r, c) = weight.shape();
                let (w, b) = values.split_at(r * c);
                EncoderParams::Linear {
                    weight: Mat::new(r, c, w.to_vec())?,
                    bias: b.to_vec(),
                }
            }
        })
    }

    pub fn map<T: Copy>(&self, f: impl FnMut(S) -> T) -> EncoderParams<T> {
        let values: Vec<T> = self.flatten().into_iter().map(f).collect();
        self.with_values(&values).expect("same structure")
    }
}

impl EncoderParams<f64> {
    /// Fan-in uniform weights, zero bias.
    pub fn init_linear(in_dim: usize, out_dim: usize, stream: &RngStream) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidArgument("encoder widths must be non-zero".into()));
        }
        let mut rng = stream.rng();
        let bound = 1.0 / (in_dim as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Ok(EncoderParams::Linear {
            weight: Mat::new(in_dim, out_dim, data)?,
            bias: vec![0.0; out_dim],
        })
    }
}

pub fn encode<S: Scalar>(features: &[f64], params: &EncoderParams<S>) -> Result<Vec<S>> {
    if features.len() != params.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "features of dimension {} for an encoder expecting {}",
            features.len(),
            params.input_dim()
        )));
    }
    Ok(match params {
        EncoderParams::Identity { .. } => features.iter().map(|&x| S::constant(x)).collect(),
        EncoderParams::Linear { weight, bias } => {
            let mut out = bias.clone();
            for (i, &x) in features.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                for (o, &w) in out.iter_mut().zip(weight.row(i)) {
                    *o = *o + w * x;
                }
            }
            out
        }
    })
}

pub fn encode_instance(instance: &LabeledInstance, params: &EncoderParams) -> Result<Vec<f64>> {
    encode(&instance.features, params)
}

/// An encoded instance labeled by its target slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded<S = f64> {
    pub slot: usize,
    pub encoding: Vec<S>,
}

/// Encodes labeled instances and maps their relations onto positions in `targets`.
pub fn encode_labeled<S: Scalar>(
    instances: &[LabeledInstance],
    targets: &[RelationId],
    params: &EncoderParams<S>,
) -> Result<Vec<Encoded<S>>> {
    instances
        .iter()
        .map(|inst| {
            let slot = targets
                .iter()
                .position(|&t| t == inst.relation)
                .ok_or(Error::LabelOutsideTargets(inst.relation.0))?;
            Ok(Encoded {
                slot,
                encoding: encode(&inst.features, params)?,
            })
        })
        .collect()
}

/// Untempered similarity logits of `encoding` against every prototype row.
pub fn similarity_logits<S: Scalar>(
    encoding: &[S],
    prototypes: &Mat<S>,
    measure: SimilarityMeasure,
) -> Result<Vec<S>> {
    if prototypes.rows() == 0 {
        return Err(Error::EmptyClassSet);
    }
    if prototypes.cols() != encoding.len() {
        return Err(Error::ShapeMismatch(format!(
            "encoding of dimension {} against prototypes of dimension {}",
            encoding.len(),
            prototypes.cols()
        )));
    }
    Ok(prototypes
        .iter_rows()
        .map(|v| match measure {
            SimilarityMeasure::Dot => dot(encoding, v),
            SimilarityMeasure::Euclidean => -squared_distance(encoding, v) * 0.5,
        })
        .collect())
}

/// `log softmax(logits / tau)` over the prototypes.
pub fn class_log_probs<S: Scalar>(
    encoding: &[S],
    prototypes: &Mat<S>,
    measure: SimilarityMeasure,
    tau: f64,
) -> Result<Vec<S>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    let logits: Vec<S> = similarity_logits(encoding, prototypes, measure)?
        .into_iter()
        .map(|l| l / tau)
        .collect();
    log_softmax(&logits)
}

/// Support instances per prototype, which must be equal across prototypes.
pub fn shots_per_class<S>(support: &[Encoded<S>], n: usize) -> Result<usize> {
    let mut counts = vec![0usize; n];
    for item in support {
        *counts
            .get_mut(item.slot)
            .ok_or(Error::LabelOutsideTargets(item.slot))? += 1;
    }
    match counts.first() {
        Some(&k) if counts.iter().all(|&c| c == k) => Ok(k),
        Some(_) => Err(Error::InvalidArgument(format!(
            "unequal support counts per class: {counts:?}"
        ))),
        None => Err(Error::EmptyClassSet),
    }
}

/// Support log-likelihood `Σ_s log p(y_s | x_s, v)`, optionally scaled by
/// `1/K`, with its analytic gradient with respect to the prototypes.
///
/// With `p_sr` the tempered softmax and `e_s` the encoding, the gradient row
/// for prototype `r` is `Σ_s (1[y_s = r] - p_sr) ∂logit_sr/∂v_r / tau`, where
/// the logit derivative is `e_s` for dot product and `e_s - v_r` for
/// Euclidean similarity.
pub fn support_log_likelihood_and_grad<S: Scalar>(
    support: &[Encoded<S>],
    prototypes: &Mat<S>,
    measure: SimilarityMeasure,
    tau: f64,
    normalize_by_k: bool,
) -> Result<(S, Mat<S>)> {
    let n = prototypes.rows();
    if n == 0 {
        return Err(Error::EmptyClassSet);
    }
    let scale = if normalize_by_k && !support.is_empty() {
        1.0 / shots_per_class(support, n)? as f64
    } else {
        if let Some(bad) = support.iter().find(|s| s.slot >= n) {
            return Err(Error::LabelOutsideTargets(bad.slot));
        }
        1.0
    };
    let d = prototypes.cols();
    let mut value = S::zero();
    let mut grad = Mat::zeros(n, d);
    for item in support {
        let log_p = class_log_probs(&item.encoding, prototypes, measure, tau)?;
        value = value + log_p[item.slot];
        for (r, lp) in log_p.into_iter().enumerate() {
            let indicator = if r == item.slot { 1.0 } else { 0.0 };
            let coef = (-lp.exp() + indicator) * (scale / tau);
            let proto = prototypes.row(r);
            let row = grad.row_mut(r);
            for j in 0..d {
                let direction = match measure {
                    SimilarityMeasure::Dot => item.encoding[j],
                    SimilarityMeasure::Euclidean => item.encoding[j] - proto[j],
                };
                row[j] = row[j] + coef * direction;
            }
        }
    }
    Ok((value * scale, grad))
}
