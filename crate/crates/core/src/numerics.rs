//! Shared math kernel: dense matrices, temperature softmax, Gaussian draws,
//! seeded random streams, and the central-difference gradient oracle.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Scalar;
use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<S = f64> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Copy> Mat<S> {
    pub fn new(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: S) -> Self {
        Mat {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<S>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let n = rows.len();
        let mut data = Vec::with_capacity(n * cols);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != cols {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has {} columns, expected {cols}",
                    row.len()
                )));
            }
            data.extend(row);
        }
        Ok(Mat {
            rows: n,
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: S) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[S]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn map<T: Copy>(&self, f: impl FnMut(S) -> T) -> Mat<T> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    /// Rows picked by index, in the order given.
    pub fn select_rows(&self, indices: &[usize]) -> Mat<S> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Mat {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

impl<S: Scalar> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, S::zero())
    }

    /// `self · rhs`.
    pub fn matmul(&self, rhs: &Mat<S>) -> Result<Mat<S>> {
        if self.cols != rhs.rows {
            return Err(Error::ShapeMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a.is_constant_zero() {
                    continue;
                }
                let src = rhs.row(k);
                let dst = out.row_mut(i);
                for (d, &b) in dst.iter_mut().zip(src) {
                    *d = *d + a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.value().is_finite())
    }

    pub fn values(&self) -> Mat<f64> {
        self.map(Scalar::value)
    }
}

impl Mat<f64> {
    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn transpose(&self) -> Mat<f64> {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }
}

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

pub fn squared_distance<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        let diff = x - y;
        acc = acc + diff * diff;
    }
    acc
}

/// `log softmax(logits)` with max subtraction.
///
/// The subtracted maximum is a constant: log-sum-exp is invariant to it, so the
/// derivative is exact without differentiating through the `max`.
pub fn log_softmax<S: Scalar>(logits: &[S]) -> Result<Vec<S>> {
    if logits.is_empty() {
        return Err(Error::EmptyClassSet);
    }
    let max = logits
        .iter()
        .map(|l| l.value())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = S::zero();
    for &l in logits {
        sum = sum + (l - max).exp();
    }
    let log_sum = sum.ln();
    Ok(logits.iter().map(|&l| (l - max) - log_sum).collect())
}

/// Probabilities proportional to `exp(logits_i / tau)`.
pub fn softmax_with_temperature(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    let scaled: Vec<f64> = logits.iter().map(|l| l / tau).collect();
    Ok(log_softmax(&scaled)?.into_iter().map(f64::exp).collect())
}

/// Central-difference gradient estimate of `f` at `x`.
pub fn finite_difference_gradient(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::OracleEvaluationFailed { coordinate: i });
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Largest elementwise `|a - b| / max(1, |a|)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Named, replayable source of randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Independent child stream, a pure function of `(self, child)`.
    pub fn fork(&self, child: u64) -> RngStream {
        RngStream::new(splitmix64(self.seed ^ splitmix64(self.stream_id)), child)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// I.i.d. standard normal draws filling `shape` (row-major), read from the
/// start of `stream`.
pub fn standard_normal_sample(shape: &[usize], stream: &RngStream) -> Vec<f64> {
    let n = shape.iter().product();
    let mut rng = stream.rng();
    StandardNormal.sample_iter(&mut rng).take(n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_equal_logits_uniform() {
        let p = softmax_with_temperature(&[0.0, 0.0, 0.0], 10.0).unwrap();
        for x in p {
            assert!(close(x, 1.0 / 3.0, 1e-15));
        }
    }

    #[test]
    fn softmax_closed_form() {
        let e = std::f64::consts::E;
        let p = softmax_with_temperature(&[1.0, 0.0], 1.0).unwrap();
        assert!(close(p[0], e / (1.0 + e), 1e-15));
        assert!(close(p[1], 1.0 / (1.0 + e), 1e-15));
        assert!(close(p[0], 0.73106, 1e-5));
        assert!(close(p[1], 0.26894, 1e-5));
        let q = softmax_with_temperature(&[10.0, 0.0], 10.0).unwrap();
        assert!(close(q[0], p[0], 1e-15));
        assert!(close(q[1], p[1], 1e-15));
    }

    #[test]
    fn softmax_rejects_empty_and_bad_tau() {
        assert!(matches!(
            softmax_with_temperature(&[], 1.0),
            Err(Error::EmptyClassSet)
        ));
        assert!(softmax_with_temperature(&[1.0], 0.0).is_err());
    }

    #[test]
    fn softmax_huge_logits_stable() {
        let p = softmax_with_temperature(&[1e6, 1e6 - 1.0], 1.0).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert!(close(p.iter().sum(), 1.0, 1e-12));
    }

    #[test]
    fn fd_constant_is_zero() {
        let g = finite_difference_gradient(|_| 4.2, &[1.0, -3.0, 7.0], 1e-5).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn fd_quadratic_and_product() {
        let g = finite_difference_gradient(
            |x| 0.5 * (x[0] * x[0] + x[1] * x[1]),
            &[3.0, 4.0],
            1e-5,
        )
        .unwrap();
        assert!(close(g[0], 3.0, 1e-6) && close(g[1], 4.0, 1e-6));
        let g = finite_difference_gradient(|x| x[0] * x[1], &[2.0, 5.0], 1e-5).unwrap();
        assert!(close(g[0], 5.0, 1e-6) && close(g[1], 2.0, 1e-6));
    }

    #[test]
    fn fd_reports_non_finite() {
        let err = finite_difference_gradient(|x| x[0].ln(), &[2.0, 0.0, 0.0], 3.0);
        assert!(matches!(err, Err(Error::OracleEvaluationFailed { coordinate: 0 })));
    }

    #[test]
    fn normal_draws_are_replayable() {
        let s = RngStream::new(7, 0);
        assert_eq!(standard_normal_sample(&[3], &s), standard_normal_sample(&[3], &s));
        let other = standard_normal_sample(&[3], &RngStream::new(7, 1));
        assert_ne!(standard_normal_sample(&[3], &s), other);
    }

    #[test]
    fn normal_draw_moments() {
        let draws = standard_normal_sample(&[100_000], &RngStream::new(1, 0));
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 0.02, "mean {mean}");
        assert!((0.98..=1.02).contains(&var), "variance {var}");
    }

    #[test]
    fn forks_differ() {
        let base = RngStream::new(3, 0);
        assert_ne!(base.fork(0), base.fork(1));
        assert_eq!(base.fork(4), base.fork(4));
        assert_ne!(base.fork(0), RngStream::new(3, 1).fork(0));
    }

    #[test]
    fn matmul_small() {
        let a = Mat::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Mat::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.as_slice(), &[2.0, 1.0, 4.0, 3.0]);
        assert!(a.matmul(&Mat::<f64>::zeros(3, 1)).is_err());
    }
}
