//! Training objectives: balanced softmax (default), cross-entropy, and the
//! RGB regression losses MSE and smooth L1.
//!
//! Every loss is mean-reduced and returns its gradient with respect to the
//! model outputs alongside the value.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::Rgb;
use crate::math::{exp, ln};
use crate::matrix::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    BalancedSoftmax,
    CrossEntropy,
    Mse,
    SmoothL1,
}

impl LossKind {
    pub fn is_regression(self) -> bool {
        matches!(self, LossKind::Mse | LossKind::SmoothL1)
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::BalancedSoftmax => "bs",
            LossKind::CrossEntropy => "ce",
            LossKind::Mse => "mse",
            LossKind::SmoothL1 => "sl1",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "bs" => Some(LossKind::BalancedSoftmax),
            "ce" => Some(LossKind::CrossEntropy),
            "mse" => Some(LossKind::Mse),
            "sl1" => Some(LossKind::SmoothL1),
            _ => None,
        }
    }
}

/// Default smoothing added to every class count.
pub const DEFAULT_EPSILON: f64 = 0.1;

/// Per-class balance factors for one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    pub alpha: Vec<f64>,
    pub epsilon: f64,
}

impl ClassWeights {
    pub fn uniform(classes: usize) -> Self {
        ClassWeights { alpha: vec![1.0; classes], epsilon: 0.0 }
    }
}

/// `alpha[c] = count_c + epsilon`. Any common scale factor cancels in the
/// loss, so raw counts serve as the proportional factors.
pub fn batch_class_weights<'a>(labels: impl IntoIterator<Item = &'a usize>, classes: usize, epsilon: f64) -> Result<ClassWeights> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let mut alpha = vec![epsilon; classes];
    for &l in labels {
        if l >= classes {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
        alpha[l] += 1.0;
    }
    Ok(ClassWeights { alpha, epsilon })
}

/// Value and output gradient of a loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Matrix,
}

/// Sum over rows of `-log(a_y e^{s_y} / sum_c a_c e^{s_c})`, with the
/// gradient scaled by `1 / normalizer`. The caller divides the sum by the
/// same normalizer to get the mean.
pub fn balanced_softmax_sum(logits: &Matrix, labels: &[usize], weights: &ClassWeights, normalizer: f64) -> Result<LossOutput> {
    let (n, k) = logits.shape();
    if labels.len() != n {
        return Err(Error::shape(format!("{n} logit rows but {} labels", labels.len())));
    }
    if weights.alpha.len() != k {
        return Err(Error::shape(format!("{k} classes but {} balance factors", weights.alpha.len())));
    }
    if weights.alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::invalid("balance factors must be positive"));
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite("logits".into()));
    }
    let log_alpha: Vec<f64> = weights.alpha.iter().map(|&a| ln(a)).collect();
    let mut grad = Matrix::zeros(n, k);
    let mut total = 0.0;
    let mut shifted = vec![0.0; k];
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::LabelOutOfRange { label: y, classes: k });
        }
        let row = logits.row(i);
        for c in 0..k {
            shifted[c] = row[c] + log_alpha[c];
        }
        let max = shifted.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for s in shifted.iter_mut() {
            *s = exp(*s - max);
            z += *s;
        }
        // shifted now holds unnormalized probabilities.
        total += ln(z) - ln(shifted[y]);
        let g = grad.row_mut(i);
        for c in 0..k {
            g[c] = shifted[c] / z / normalizer;
        }
        g[y] -= 1.0 / normalizer;
    }
    Ok(LossOutput { value: total, grad })
}

/// Balanced softmax loss, averaged over points.
pub fn balanced_softmax_loss(logits: &Matrix, labels: &[usize], weights: &ClassWeights) -> Result<LossOutput> {
    let n = labels.len().max(1) as f64;
    let mut out = balanced_softmax_sum(logits, labels, weights, n)?;
    out.value /= n;
    Ok(out)
}

/// Softmax cross-entropy, averaged over points.
pub fn cross_entropy_loss(logits: &Matrix, labels: &[usize]) -> Result<LossOutput> {
    balanced_softmax_loss(logits, labels, &ClassWeights::uniform(logits.cols()))
}

fn check_rgb(predicted: &Matrix, target: &[Rgb]) -> Result<()> {
    if predicted.cols() != 3 || predicted.rows() != target.len() {
        return Err(Error::shape(format!(
            "predictions are {}x{}, targets {}x3",
            predicted.rows(),
            predicted.cols(),
            target.len()
        )));
    }
    if !predicted.is_finite() {
        return Err(Error::NonFinite("predicted colors".into()));
    }
    Ok(())
}

/// Sum of squared channel errors; gradient scaled by `1 / normalizer`.
pub fn mse_sum(predicted: &Matrix, target: &[Rgb], normalizer: f64) -> Result<LossOutput> {
    check_rgb(predicted, target)?;
    let mut grad = Matrix::zeros(predicted.rows(), 3);
    let mut total = 0.0;
    for (i, t) in target.iter().enumerate() {
        for c in 0..3 {
            let r = predicted.get(i, c) - t[c];
            total += r * r;
            grad.set(i, c, 2.0 * r / normalizer);
        }
    }
    Ok(LossOutput { value: total, grad })
}

/// Mean squared error over all `N x 3` channels.
pub fn mse_loss(predicted: &Matrix, target: &[Rgb]) -> Result<LossOutput> {
    let n = (3 * target.len()).max(1) as f64;
    let mut out = mse_sum(predicted, target, n)?;
    out.value /= n;
    Ok(out)
}

/// Sum of Huber-style terms: `0.5 r^2 / beta` below `beta`, `|r| - beta / 2`
/// above.
pub fn smooth_l1_sum(predicted: &Matrix, target: &[Rgb], beta: f64, normalizer: f64) -> Result<LossOutput> {
    check_rgb(predicted, target)?;
    if !(beta > 0.0) {
        return Err(Error::invalid("beta must be positive"));
    }
    let mut grad = Matrix::zeros(predicted.rows(), 3);
    let mut total = 0.0;
    for (i, t) in target.iter().enumerate() {
        for c in 0..3 {
            let r = predicted.get(i, c) - t[c];
            let (v, g) = if r.abs() < beta { (0.5 * r * r / beta, r / beta) } else { (r.abs() - 0.5 * beta, r.signum()) };
            total += v;
            grad.set(i, c, g / normalizer);
        }
    }
    Ok(LossOutput { value: total, grad })
}

pub fn smooth_l1_loss(predicted: &Matrix, target: &[Rgb], beta: f64) -> Result<LossOutput> {
    let n = (3 * target.len()).max(1) as f64;
    let mut out = smooth_l1_sum(predicted, target, beta, n)?;
    out.value /= n;
    Ok(out)
}
