//! Central finite-difference check of the hand-written backward pass.

use alloc::string::String;
use alloc::vec::Vec;

use crate::geometry::Rgb;
use crate::hinting::HintedSample;
use crate::losses::{balanced_softmax_loss, batch_class_weights, cross_entropy_loss, mse_loss, smooth_l1_loss, LossKind, LossOutput, DEFAULT_EPSILON};
use crate::model::{Gradients, Head, ModelParams};
use crate::{Error, Result};

/// Largest relative error seen in one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
}

/// Entries whose analytic and numeric gradients are both below this are
/// compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Mean loss of one sample; `colors` are the regression targets.
pub fn sample_loss(params: &ModelParams, sample: &HintedSample, colors: &[Rgb], kind: LossKind) -> Result<LossOutput> {
    let head_ok = (params.config.head == Head::Regression) == kind.is_regression();
    if !head_ok {
        return Err(Error::invalid("loss does not fit the model head"));
    }
    match kind {
        LossKind::BalancedSoftmax => {
            let out = params.forward(sample)?;
            let weights = batch_class_weights(&sample.labels, params.config.classes, DEFAULT_EPSILON)?;
            balanced_softmax_loss(&out, &sample.labels, &weights)
        }
        LossKind::CrossEntropy => cross_entropy_loss(&params.forward(sample)?, &sample.labels),
        LossKind::Mse => mse_loss(params.trace(&sample.points, None)?.output(), colors),
        LossKind::SmoothL1 => smooth_l1_loss(params.trace(&sample.points, None)?.output(), colors, 1.0),
    }
}

fn analytic(params: &ModelParams, sample: &HintedSample, colors: &[Rgb], kind: LossKind) -> Result<Gradients> {
    let hints = if kind.is_regression() { None } else { Some(&sample.hints) };
    let trace = params.trace(&sample.points, hints)?;
    let loss = sample_loss(params, sample, colors, kind)?;
    params.backward_trace(&trace, &loss.grad)
}

/// Compares every parameter against `(L(p + h) - L(p - h)) / 2h`.
pub fn check_gradients(params: &ModelParams, sample: &HintedSample, colors: &[Rgb], kind: LossKind, h: f64) -> Result<Vec<TensorCheck>> {
    let grads = analytic(params, sample, colors, kind)?;
    let names = params.config.layer_names();
    let mut probe = params.clone();
    let mut report = Vec::new();
    let tensor_count = grads.tensors().count();
    for t in 0..tensor_count {
        let g = grads.tensors().nth(t).expect("tensor index in range");
        let mut worst = 0.0f64;
        for i in 0..g.len() {
            let original = probe.weights.tensors().nth(t).expect("tensor index in range")[i];
            probe.weights.tensors_mut().nth(t).expect("tensor index in range")[i] = original + h;
            let plus = sample_loss(&probe, sample, colors, kind)?.value;
            probe.weights.tensors_mut().nth(t).expect("tensor index in range")[i] = original - h;
            let minus = sample_loss(&probe, sample, colors, kind)?.value;
            probe.weights.tensors_mut().nth(t).expect("tensor index in range")[i] = original;
            worst = worst.max(relative_error(g[i], (plus - minus) / (2.0 * h)));
        }
        let suffix = if t % 2 == 0 { "weight" } else { "bias" };
        report.push(TensorCheck { name: alloc::format!("{}.{}", names[t / 2], suffix), max_rel_error: worst });
    }
    Ok(report)
}
