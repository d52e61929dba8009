//! Dense algebra and activation kernels with hand-written backward passes.
//!
//! Everything is `f64`. Vectors are plain slices; matrices are row-major.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Denominator floor for relative gradient error. Gradients whose magnitude is
/// below this are compared on an absolute scale instead.
pub const GRAD_CHECK_SCALE_FLOOR: f64 = 1e-6;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!(
                "matrix dims must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        ensure_finite(&data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Weight matrix (`in_dim x out_dim`) and bias (`out_dim`) of an affine layer `xW + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(in_dim, out_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(Error::Dimension(format!(
                "bias has {} entries but layer has {} outputs",
                bias.len(),
                weight.cols()
            )));
        }
        ensure_finite(&bias)?;
        Ok(Self { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    /// Forward pass without validation, for hot loops whose shapes are fixed by construction.
    pub(crate) fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim());
        let mut out = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.weight.row(i)) {
                *o += xi * w;
            }
        }
        out
    }

    /// Accumulates `dL/dW += x^T dy`, `dL/db += dy` into `grad` and returns `dL/dx = dy W^T`.
    pub(crate) fn backprop(&self, x: &[f64], dy: &[f64], grad: &mut DenseLayer) -> Vec<f64> {
        for (gb, &d) in grad.bias.iter_mut().zip(dy) {
            *gb += d;
        }
        let mut dx = vec![0.0; self.in_dim()];
        for (i, &xi) in x.iter().enumerate() {
            let grow = grad.weight.row_mut(i);
            for (g, &d) in grow.iter_mut().zip(dy) {
                *g += xi * d;
            }
            dx[i] = self.weight.row(i).iter().zip(dy).map(|(w, d)| w * d).sum();
        }
        dx
    }
}

pub(crate) fn ensure_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NumericDomain(format!(
            "non-finite value {} at index {i}",
            values[i]
        ))),
        None => Ok(()),
    }
}

fn check_slope(slope: f64) -> Result<()> {
    if slope > 0.0 && slope < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("lrelu slope must lie in (0,1), got {slope}")))
    }
}

#[inline]
pub(crate) fn lrelu_scalar(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Derivative of leaky ReLU; the kink at 0 takes the negative-branch slope.
#[inline]
pub(crate) fn lrelu_grad_scalar(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

/// Elementwise `max(x, slope * x)`.
pub fn lrelu(x: &[f64], slope: f64) -> Result<Vec<f64>> {
    check_slope(slope)?;
    ensure_finite(x)?;
    Ok(x.iter().map(|&v| lrelu_scalar(v, slope)).collect())
}

pub fn lrelu_grad(x: &[f64], slope: f64) -> Result<Vec<f64>> {
    check_slope(slope)?;
    ensure_finite(x)?;
    Ok(x.iter().map(|&v| lrelu_grad_scalar(v, slope)).collect())
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Dimension("softmax of an empty vector".into()));
    }
    ensure_finite(scores)?;
    Ok(softmax_unchecked(scores))
}

pub(crate) fn softmax_unchecked(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// Backward pass of softmax: given `p = softmax(s)` and `dL/dp`, returns `dL/ds`.
pub(crate) fn softmax_backprop(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    p.iter().zip(dp).map(|(pi, di)| pi * (di - dot)).collect()
}

/// `xW + b`.
pub fn dense_forward(x: &[f64], layer: &DenseLayer) -> Result<Vec<f64>> {
    if x.len() != layer.in_dim() {
        return Err(Error::Dimension(format!(
            "input has {} entries, layer expects {}",
            x.len(),
            layer.in_dim()
        )));
    }
    ensure_finite(x)?;
    let out = layer.apply(x);
    ensure_finite(&out)?;
    Ok(out)
}

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Relative error between two gradient entries, with an absolute floor on the scale.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(GRAD_CHECK_SCALE_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares `analytic` against `(f(θ+eps) - f(θ-eps)) / (2 eps)` for every parameter.
///
/// The loss is evaluated twice at `params` first; differing results mean the
/// function is not deterministic and the check is refused.
pub fn grad_check<F>(mut loss_fn: F, params: &[f64], analytic: &[f64], eps: f64) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("eps must lie in [1e-7, 1e-3], got {eps}")));
    }
    if params.len() != analytic.len() {
        return Err(Error::Dimension(format!(
            "{} parameters but {} gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    let first = loss_fn(params);
    let second = loss_fn(params);
    if first.to_bits() != second.to_bits() {
        return Err(Error::CheckInvalid(format!(
            "loss is not deterministic ({first} vs {second})"
        )));
    }

    let mut theta = params.to_vec();
    let mut worst = GradCheck {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: analytic.first().copied().unwrap_or(0.0),
        numeric: 0.0,
    };
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + eps;
        let plus = loss_fn(&theta);
        theta[i] = orig - eps;
        let minus = loss_fn(&theta);
        theta[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        if !numeric.is_finite() {
            return Err(Error::NumericDomain(format!(
                "finite difference for parameter {i} is {numeric}"
            )));
        }
        let err = relative_error(analytic[i], numeric);
        if err > worst.max_relative_error {
            worst = GradCheck {
                max_relative_error: err,
                worst_index: i,
                analytic: analytic[i],
                numeric,
            };
        }
    }
    Ok(worst)
}

/// Matrix with entries i.i.d. uniform on `[-bound, bound]`.
pub fn init_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Result<Matrix> {
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(Error::Config(format!("init bound must be positive, got {bound}")));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension(format!(
            "matrix dims must be positive, got {rows}x{cols}"
        )));
    }
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Ok(Matrix { rows, cols, data })
}

/// `√(6 / a_max_len)`, the initialization bound tied to the longest training answer.
pub fn init_bound(a_max_len: usize) -> Result<f64> {
    if a_max_len < 1 {
        return Err(Error::Config("longest answer length must be at least 1".into()));
    }
    Ok((6.0 / a_max_len as f64).sqrt())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}
