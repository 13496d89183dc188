//! Graph-convolutional prior over class prototypes.
//!
//! Relation summaries `h_r` come from graph convolutions over the relation
//! graph; each prototype has an isotropic unit-covariance Gaussian prior
//! centred on its summary.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::error::{Error, Result};
use crate::graph::RelationGraph;
use crate::numerics::{Mat, RngStream};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
}

impl Activation {
    fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.relu(),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::InvalidArgument(format!("unknown activation {other:?}"))),
        }
    }
}

/// `H' = activation(Â · H · weight + bias)`; `weight` is `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnLayer<S = f64> {
    pub weight: Mat<S>,
    pub bias: Option<Vec<S>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnnParams<S = f64> {
    pub layers: Vec<GcnLayer<S>>,
    pub activation: Activation,
}

impl<S: Copy> GnnParams<S> {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.rows())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    pub fn num_values(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.as_ref().map_or(0, Vec::len))
            .sum()
    }

    /// Weights then biases, layer by layer.
    pub fn flatten(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.num_values());
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.as_slice());
            if let Some(b) = &layer.bias {
                out.extend_from_slice(b);
            }
        }
        out
    }

    /// Same structure as `self`, values taken from `values` in [`flatten`](Self::flatten) order.
    pub fn with_values<T: Copy>(&self, values: &[T]) -> Result<GnnParams<T>> {
        if values.len() != self.num_values() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} graph parameters",
                values.len(),
                self.num_values()
            )));
        }
        let mut rest = values;
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head.to_vec()
        };
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let (r, c) = l.weight.shape();
                let weight = Mat::new(r, c, take(r * c))?;
                let bias = l.bias.as_ref().map(|b| take(b.len()));
                Ok(GcnLayer { weight, bias })
            })
            .collect::<Result<_>>()?;
        Ok(GnnParams {
            layers,
            activation: self.activation,
        })
    }

    pub fn map<T: Copy>(&self, f: impl FnMut(S) -> T) -> GnnParams<T> {
        let values: Vec<T> = self.flatten().into_iter().map(f).collect();
        self.with_values(&values).expect("same structure")
    }
}

impl GnnParams<f64> {
    /// Single identity layer without bias: `h = Â x`.
    pub fn identity(dim: usize) -> Self {
        GnnParams {
            layers: vec![GcnLayer {
                weight: Mat::identity(dim),
                bias: None,
            }],
            activation: Activation::Identity,
        }
    }

    /// Fan-in uniform initialization `U(-1/√fan_in, 1/√fan_in)`, zero biases.
    /// `layers` counts graph convolutions; hidden layers keep width `out_dim`.
    pub fn init(
        in_dim: usize,
        out_dim: usize,
        layers: usize,
        activation: Activation,
        bias: bool,
        stream: &RngStream,
    ) -> Result<Self> {
        if layers == 0 || in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidArgument(
                "graph network needs at least one layer and non-zero widths".into(),
            ));
        }
        let mut rng = stream.rng();
        let layers = (0..layers)
            .map(|i| {
                let fan_in = if i == 0 { in_dim } else { out_dim };
                let bound = 1.0 / (fan_in as f64).sqrt();
                let data = (0..fan_in * out_dim)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                GcnLayer {
                    weight: Mat::new(fan_in, out_dim, data).expect("sized"),
                    bias: bias.then(|| vec![0.0; out_dim]),
                }
            })
            .collect();
        Ok(GnnParams { layers, activation })
    }
}

fn check_layers<S: Copy>(graph: &RelationGraph, params: &GnnParams<S>) -> Result<()> {
    if params.input_dim() != graph.feature_dim() {
        return Err(Error::ShapeMismatch(format!(
            "graph network expects {} features, graph has {}",
            params.input_dim(),
            graph.feature_dim()
        )));
    }
    params.check_structure()
}

impl<S: Copy> GnnParams<S> {
    /// Consecutive layer widths chain and biases match their layer.
    pub fn check_structure(&self) -> Result<()> {
        check_widths(self)
    }
}

fn check_widths<S: Copy>(params: &GnnParams<S>) -> Result<()> {
    if params.layers.is_empty() {
        return Err(Error::InvalidArgument("graph network has no layers".into()));
    }
    let mut width = params.input_dim();
    for (i, layer) in params.layers.iter().enumerate() {
        if layer.weight.rows() != width {
            return Err(Error::ShapeMismatch(format!(
                "layer {i} expects input width {}, got {width}",
                layer.weight.rows()
            )));
        }
        width = layer.weight.cols();
        if layer.bias.as_ref().is_some_and(|b| b.len() != width) {
            return Err(Error::ShapeMismatch(format!("layer {i} bias length differs from {width}")));
        }
    }
    Ok(())
}

fn apply_layer<S: Scalar>(aggregated: &Mat<S>, layer: &GcnLayer<S>, activation: Activation) -> Result<Mat<S>> {
    let mut out = aggregated.matmul(&layer.weight)?;
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        if let Some(b) = &layer.bias {
            for (x, &bj) in row.iter_mut().zip(b) {
                *x = *x + bj;
            }
        }
        for x in row.iter_mut() {
            *x = activation.apply(*x);
        }
    }
    Ok(out)
}

/// Summaries for every node of the graph.
pub fn relation_summaries<S: Scalar>(graph: &RelationGraph, params: &GnnParams<S>) -> Result<Mat<S>> {
    let all: Vec<usize> = (0..graph.num_nodes()).collect();
    relation_summaries_for(graph, params, &all)
}

/// Summaries for the listed nodes only. Earlier layers are still computed for
/// the whole graph; the last layer is evaluated on `rows` alone.
pub fn relation_summaries_for<S: Scalar>(
    graph: &RelationGraph,
    params: &GnnParams<S>,
    rows: &[usize],
) -> Result<Mat<S>> {
    check_layers(graph, params)?;
    if let Some(&bad) = rows.iter().find(|&&r| r >= graph.num_nodes()) {
        return Err(Error::UnknownRelation(bad));
    }
    let all: Vec<usize> = (0..graph.num_nodes()).collect();
    let last = params.layers.len() - 1;
    let features = graph.features().matrix();
    let mut hidden: Option<Mat<S>> = None;
    for (i, layer) in params.layers.iter().enumerate() {
        let targets = if i == last { rows } else { &all[..] };
        // The first layer's input is constant, so aggregate it in plain f64.
        let aggregated = match &hidden {
            None => graph.propagate(features, targets)?.map(S::constant),
            Some(h) => graph.propagate(h, targets)?,
        };
        hidden = Some(apply_layer(&aggregated, layer, params.activation)?);
    }
    Ok(hidden.expect("at least one layer"))
}

/// `Σ_r -½‖v_r - h_r‖²` and its gradient `h_r - v_r`; additive constants dropped.
pub fn prior_log_density_and_grad<S: Scalar>(
    prototypes: &Mat<S>,
    means: &Mat<S>,
) -> Result<(S, Mat<S>)> {
    if prototypes.shape() != means.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prototypes {:?} vs prior means {:?}",
            prototypes.shape(),
            means.shape()
        )));
    }
    let mut value = S::zero();
    let mut grad = Mat::zeros(prototypes.rows(), prototypes.cols());
    for ((g, &v), &h) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(prototypes.as_slice())
        .zip(means.as_slice())
    {
        let diff = h - v;
        value = value - diff * diff * 0.5;
        *g = diff;
    }
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_knn_graph, RelationEmbeddings};
    use crate::numerics::{finite_difference_gradient, max_relative_error};

    fn emb(rows: Vec<Vec<f64>>) -> RelationEmbeddings {
        RelationEmbeddings::new(Mat::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn isolated_node_identity() {
        let g = RelationGraph::from_edges(emb(vec![vec![1.5, -2.0]]), []).unwrap();
        let h = relation_summaries(&g, &GnnParams::identity(2)).unwrap();
        assert_eq!(h.row(0), &[1.5, -2.0]);
    }

    #[test]
    fn two_nodes_average() {
        let g = RelationGraph::from_edges(emb(vec![vec![1.0, 2.0], vec![3.0, -4.0]]), [(0, 1)]).unwrap();
        let h = relation_summaries(&g, &GnnParams::identity(2)).unwrap();
        for r in 0..2 {
            assert!((h.get(r, 0) - 2.0).abs() < 1e-15);
            assert!((h.get(r, 1) + 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_weight_gives_bias() {
        let g = build_knn_graph(&emb(vec![vec![1.0], vec![2.0], vec![7.0]]), 1).unwrap();
        let params = GnnParams {
            layers: vec![GcnLayer {
                weight: Mat::zeros(1, 3),
                bias: Some(vec![0.5, -1.0, 2.0]),
            }],
            activation: Activation::Identity,
        };
        let h = relation_summaries(&g, &params).unwrap();
        for row in h.iter_rows() {
            assert_eq!(row, &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let g = RelationGraph::from_edges(emb(vec![vec![1.0, 2.0]]), []).unwrap();
        assert!(relation_summaries(&g, &GnnParams::identity(3)).is_err());
    }

    #[test]
    fn linear_in_features() {
        let rows = vec![vec![1.0, 2.0], vec![-1.0, 0.5], vec![3.0, 3.0], vec![0.0, -2.0]];
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| 2.5 * x).collect()).collect();
        let params = GnnParams::init(2, 3, 1, Activation::Identity, false, &RngStream::new(1, 0)).unwrap();
        let g1 = build_knn_graph(&emb(rows), 2).unwrap();
        let edges = g1.edges();
        let g2 = RelationGraph::from_edges(emb(scaled), edges).unwrap();
        let h1 = relation_summaries(&g1, &params).unwrap();
        let h2 = relation_summaries(&g2, &params).unwrap();
        for (a, b) in h1.as_slice().iter().zip(h2.as_slice()) {
            assert!((2.5 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn subset_rows_match_full() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64 * 0.3]).collect();
        let g = build_knn_graph(&emb(rows), 2).unwrap();
        let params = GnnParams::init(2, 3, 2, Activation::Relu, true, &RngStream::new(2, 0)).unwrap();
        let full = relation_summaries(&g, &params).unwrap();
        let part = relation_summaries_for(&g, &params, &[4, 1]).unwrap();
        assert_eq!(part.row(0), full.row(4));
        assert_eq!(part.row(1), full.row(1));
    }

    #[test]
    fn prior_mode_and_closed_form() {
        let h = Mat::from_rows(vec![vec![1.0, 2.0], vec![0.0, -1.0]]).unwrap();
        let (v, g) = prior_log_density_and_grad(&h, &h).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.as_slice().iter().all(|&x| x == 0.0));

        let v1 = Mat::from_rows(vec![vec![1.0, 0.0]]).unwrap();
        let h1 = Mat::from_rows(vec![vec![0.0, 0.0]]).unwrap();
        let (v, g) = prior_log_density_and_grad(&v1, &h1).unwrap();
        assert_eq!(v, -0.5);
        assert_eq!(g.as_slice(), &[-1.0, 0.0]);

        assert!(prior_log_density_and_grad(&v1, &h).is_err());
    }

    #[test]
    fn prior_gradient_matches_oracle() {
        let h = Mat::from_rows(vec![vec![0.3, -1.2, 2.0], vec![1.0, 0.1, -0.4]]).unwrap();
        let v = Mat::from_rows(vec![vec![-0.7, 0.2, 1.1], vec![2.2, -0.9, 0.0]]).unwrap();
        let (_, g) = prior_log_density_and_grad(&v, &h).unwrap();
        let fd = finite_difference_gradient(
            |x| {
                let m = Mat::new(2, 3, x.to_vec()).unwrap();
                prior_log_density_and_grad(&m, &h).unwrap().0
            },
            v.as_slice(),
            1e-5,
        )
        .unwrap();
        assert!(max_relative_error(g.as_slice(), &fd) < 1e-4);
    }

    #[test]
    fn flatten_round_trip() {
        let p = GnnParams::init(3, 2, 2, Activation::Identity, true, &RngStream::new(3, 0)).unwrap();
        let flat = p.flatten();
        assert_eq!(flat.len(), p.num_values());
        assert_eq!(p.with_values(&flat).unwrap(), p);
        assert!(p.with_values(&flat[1..]).is_err());
    }
}
