//! Point encoder (backbone) and color decoder with hand-written gradients.
//!
//! Backbone: a shared per-point MLP over `(x, y, z)`, a channel-wise max over
//! all points, one global layer, and a final linear layer mixing each point's
//! feature with the global one into `D` channels. It never sees hints.
//!
//! Decoder: per point, `[feature | hint]` goes through a hidden layer; each
//! point then also takes the channel-wise max of that hidden layer over its
//! `decoder_neighbors` nearest points (by input coordinates, itself
//! included), and further layers produce `K` logits. With
//! `decoder_neighbors = 0` the decoder is purely pointwise. The neighborhood
//! max is what lets a seed's revealed color reach unknown points nearby.
//!
//! The regression head used by the RGB losses drops the hint input and emits
//! three values per point.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::geometry::Vec3;
use crate::hinting::HintedSample;
use crate::math::{sqrt, squared_distance};
use crate::matrix::Matrix;
use crate::rng::{self, op};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Head {
    /// `K` logits from `[feature | K-dim hint]`.
    #[default]
    Classification,
    /// Three color channels from the feature alone.
    Regression,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Number of color classes `K`.
    pub classes: usize,
    /// Backbone output width `D`.
    pub feature_dim: usize,
    /// Widths of the per-point encoder layers after the 3 input coordinates.
    pub encoder_widths: Vec<usize>,
    pub global_width: usize,
    /// Hidden decoder widths; the output layer is implied by the head.
    pub decoder_widths: Vec<usize>,
    pub decoder_neighbors: usize,
    pub head: Head,
}

impl ModelConfig {
    pub fn new(classes: usize) -> Self {
        ModelConfig {
            classes,
            feature_dim: 128,
            encoder_widths: vec![64, 128],
            global_width: 128,
            decoder_widths: vec![128],
            decoder_neighbors: 16,
            head: Head::Classification,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths_ok = self.classes >= 1
            && self.feature_dim >= 1
            && self.global_width >= 1
            && !self.encoder_widths.is_empty()
            && self.encoder_widths.iter().all(|&w| w >= 1)
            && self.decoder_widths.iter().all(|&w| w >= 1);
        if !widths_ok {
            return Err(Error::invalid("model widths must be at least 1 and the encoder non-empty"));
        }
        if self.decoder_neighbors > 0 && self.decoder_widths.is_empty() {
            return Err(Error::invalid("neighborhood pooling needs at least one hidden decoder layer"));
        }
        Ok(())
    }

    /// Width of the hint input (`K`, or 0 for the regression head).
    pub fn hint_width(&self) -> usize {
        match self.head {
            Head::Classification => self.classes,
            Head::Regression => 0,
        }
    }

    pub fn decoder_input_width(&self) -> usize {
        self.feature_dim + self.hint_width()
    }

    pub fn output_width(&self) -> usize {
        match self.head {
            Head::Classification => self.classes,
            Head::Regression => 3,
        }
    }

    fn encoder_out(&self) -> usize {
        *self.encoder_widths.last().expect("validated non-empty")
    }

    /// `(fan_in, fan_out)` of every layer in storage order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut prev = 3;
        for &w in &self.encoder_widths {
            shapes.push((prev, w));
            prev = w;
        }
        shapes.push((self.encoder_out(), self.global_width));
        shapes.push((self.encoder_out() + self.global_width, self.feature_dim));
        let mut prev = self.decoder_input_width();
        for (i, &w) in self.decoder_widths.iter().enumerate() {
            shapes.push((prev, w));
            prev = if i == 0 && self.decoder_neighbors > 0 { 2 * w } else { w };
        }
        shapes.push((prev, self.output_width()));
        shapes
    }

    /// Names of the layers, matching [`ModelConfig::layer_shapes`].
    pub fn layer_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.encoder_widths.len()).map(|i| format!("encoder.{i}")).collect();
        names.push("global".into());
        names.push("mix".into());
        names.extend((0..self.decoder_widths.len()).map(|i| format!("decoder.{i}")));
        names.push("decoder.out".into());
        names
    }
}

/// Dense layer `y = W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear { weight: Matrix::zeros(fan_out, fan_in), bias: vec![0.0; fan_out] }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }

    fn forward(&self, x: &Matrix) -> Matrix {
        let mut y = Matrix::zeros(x.rows(), self.fan_out());
        for n in 0..x.rows() {
            let xr = x.row(n);
            let yr = y.row_mut(n);
            for (o, out) in yr.iter_mut().enumerate() {
                *out = self.bias[o] + dot(self.weight.row(o), xr);
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad`; returns `dL/dx` when asked.
    fn backward(&self, x: &Matrix, dy: &Matrix, grad: &mut Linear, need_dx: bool) -> Option<Matrix> {
        let mut dx = need_dx.then(|| Matrix::zeros(x.rows(), self.fan_in()));
        for n in 0..x.rows() {
            let xr = x.row(n);
            for (o, &g) in dy.row(n).iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad.bias[o] += g;
                axpy(g, xr, grad.weight.row_mut(o));
                if let Some(dx) = dx.as_mut() {
                    axpy(g, self.weight.row(o), dx.row_mut(n));
                }
            }
        }
        dx
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn relu_in_place(m: &mut Matrix) {
    for v in m.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries whose activation was clamped.
fn relu_mask(grad: &mut Matrix, act: &Matrix) {
    for (g, a) in grad.as_mut_slice().iter_mut().zip(act.as_slice()) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// One tensor per layer weight and bias, in a fixed order. Used for the
/// parameters themselves, their gradients, and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub layers: Vec<Linear>,
}

impl ParamSet {
    pub fn zeros(config: &ModelConfig) -> Self {
        ParamSet { layers: config.layer_shapes().into_iter().map(|(i, o)| Linear::zeros(i, o)).collect() }
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet { layers: self.layers.iter().map(|l| Linear::zeros(l.fan_in(), l.fan_out())).collect() }
    }

    /// Flat views of every tensor: `weight` then `bias` for each layer.
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().map(<[f64]>::len).sum()
    }
}

/// Parameter gradients, shaped like [`ParamSet`].
pub type Gradients = ParamSet;

/// Backbone and decoder weights together with their configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub weights: ParamSet,
}

/// Indices of each point's nearest neighbors, `k` per point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    k: usize,
    idx: Vec<usize>,
}

impl NeighborGraph {
    /// The `k` nearest points to each point, itself included; distance ties go
    /// to the lower index. `k` is capped at the number of points.
    pub fn build(points: &[Vec3], k: usize) -> Self {
        let n = points.len();
        let k = k.min(n);
        if k == 0 {
            return NeighborGraph { k: 0, idx: Vec::new() };
        }
        let mut idx = Vec::with_capacity(n * k);
        let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
        for p in points {
            cand.clear();
            cand.extend(points.iter().enumerate().map(|(j, q)| (squared_distance(p, q), j)));
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < n {
                cand.select_nth_unstable_by(k - 1, cmp);
            }
            let nearest = &mut cand[..k];
            nearest.sort_unstable_by(cmp);
            idx.extend(nearest.iter().map(|c| c.1));
        }
        NeighborGraph { k, idx }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.idx[i * self.k..(i + 1) * self.k]
    }
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    encoder_acts: Vec<Matrix>,
    pooled: Vec<f64>,
    pool_argmax: Vec<usize>,
    global: Vec<f64>,
    mix_in: Matrix,
    features: Matrix,
    /// Inputs to every decoder layer, the last entry being the input to the
    /// output layer.
    decoder_inputs: Vec<Matrix>,
    /// Per `(point, channel)` the neighbor that won the decoder max.
    neighbor_argmax: Vec<usize>,
    output: Matrix,
}

impl Trace {
    pub fn output(&self) -> &Matrix {
        &self.output
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(config: ModelConfig, rng_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut weights = ParamSet::zeros(&config);
        for (l, layer) in weights.layers.iter_mut().enumerate() {
            let bound = sqrt(6.0 / (layer.fan_in() + layer.fan_out()) as f64);
            let mut rng = rng::stream(&[rng_seed, op::INIT, l as u64]);
            for w in layer.weight.as_mut_slice() {
                *w = rng.gen_range(-bound..=bound);
            }
        }
        Ok(ModelParams { config, weights })
    }

    pub fn from_parts(config: ModelConfig, weights: ParamSet) -> Result<Self> {
        config.validate()?;
        let shapes = config.layer_shapes();
        let ok = shapes.len() == weights.layers.len()
            && shapes.iter().zip(&weights.layers).all(|(&(i, o), l)| {
                l.fan_in() == i && l.fan_out() == o && l.bias.len() == o
            });
        if !ok {
            return Err(Error::shape("parameter tensors do not match the model configuration"));
        }
        Ok(ModelParams { config, weights })
    }

    fn n_encoder(&self) -> usize {
        self.config.encoder_widths.len()
    }

    fn global_layer(&self) -> &Linear {
        &self.weights.layers[self.n_encoder()]
    }

    fn mix_layer(&self) -> &Linear {
        &self.weights.layers[self.n_encoder() + 1]
    }

    fn decoder_layers(&self) -> &[Linear] {
        &self.weights.layers[self.n_encoder() + 2..]
    }

    /// Per-point features `N x D`.
    pub fn backbone_forward(&self, points: &[Vec3]) -> Result<Matrix> {
        Ok(self.backbone_trace(points)?.features)
    }

    fn backbone_trace(&self, points: &[Vec3]) -> Result<Trace> {
        if points.is_empty() {
            return Err(Error::invalid("cannot encode an empty point cloud"));
        }
        let n = points.len();
        let input = Matrix::from_vec(n, 3, points.iter().flatten().copied().collect())?;
        let mut encoder_acts = vec![input];
        for layer in &self.weights.layers[..self.n_encoder()] {
            let mut h = layer.forward(encoder_acts.last().expect("input present"));
            relu_in_place(&mut h);
            encoder_acts.push(h);
        }
        let last = encoder_acts.last().expect("input present");
        let width = last.cols();
        let mut pooled = vec![f64::NEG_INFINITY; width];
        let mut pool_argmax = vec![0usize; width];
        for i in 0..n {
            for (c, &v) in last.row(i).iter().enumerate() {
                // Strict comparison keeps the lowest index on ties.
                if v > pooled[c] {
                    pooled[c] = v;
                    pool_argmax[c] = i;
                }
            }
        }
        let mut global = self.global_layer().forward(&Matrix::from_vec(1, width, pooled.clone())?).into_vec();
        for g in &mut global {
            *g = g.max(0.0);
        }
        let mut mix_in = Matrix::zeros(n, width + global.len());
        for i in 0..n {
            let row = mix_in.row_mut(i);
            row[..width].copy_from_slice(last.row(i));
            row[width..].copy_from_slice(&global);
        }
        let features = self.mix_layer().forward(&mix_in);
        Ok(Trace {
            encoder_acts,
            pooled,
            pool_argmax,
            global,
            mix_in,
            features,
            decoder_inputs: Vec::new(),
            neighbor_argmax: Vec::new(),
            output: Matrix::zeros(0, 0),
        })
    }

    fn decoder_input(&self, features: &Matrix, hints: Option<&Matrix>) -> Result<Matrix> {
        let d = self.config.feature_dim;
        if features.cols() != d {
            return Err(Error::shape(format!("features have {} columns, expected {d}", features.cols())));
        }
        let hw = self.config.hint_width();
        if hw == 0 {
            return Ok(features.clone());
        }
        match hints {
            Some(h) if h.shape() == (features.rows(), hw) => features.hconcat(h),
            Some(h) => Err(Error::shape(format!(
                "hints are {}x{}, expected {}x{hw}",
                h.rows(),
                h.cols(),
                features.rows()
            ))),
            None => features.hconcat(&Matrix::zeros(features.rows(), hw)),
        }
    }

    fn decoder_trace(&self, trace: &mut Trace, hints: Option<&Matrix>, graph: &NeighborGraph) -> Result<()> {
        let n = trace.features.rows();
        let pooling = self.config.decoder_neighbors > 0;
        if pooling && graph.idx.len() != n * graph.k {
            return Err(Error::shape("neighbor graph does not match the point count"));
        }
        let layers = self.decoder_layers();
        let hidden = layers.len() - 1;
        let mut x = self.decoder_input(&trace.features, hints)?;
        for (l, layer) in layers[..hidden].iter().enumerate() {
            let mut h = layer.forward(&x);
            relu_in_place(&mut h);
            trace.decoder_inputs.push(x);
            x = if l == 0 && pooling {
                let (joined, argmax) = neighbor_max(&h, graph)?;
                trace.neighbor_argmax = argmax;
                joined
            } else {
                h
            };
        }
        trace.output = layers[hidden].forward(&x);
        trace.decoder_inputs.push(x);
        Ok(())
    }

    /// Logits (or colors, for the regression head) from backbone features.
    ///
    /// `hints` must be `N x K` for the classification head; `None` means no
    /// seeds. The neighbor graph is only read when pooling is enabled.
    pub fn decoder_forward(&self, features: &Matrix, hints: Option<&Matrix>, graph: &NeighborGraph) -> Result<Matrix> {
        let mut trace = Trace {
            encoder_acts: Vec::new(),
            pooled: Vec::new(),
            pool_argmax: Vec::new(),
            global: Vec::new(),
            mix_in: Matrix::zeros(0, 0),
            features: features.clone(),
            decoder_inputs: Vec::new(),
            neighbor_argmax: Vec::new(),
            output: Matrix::zeros(0, 0),
        };
        self.decoder_trace(&mut trace, hints, graph)?;
        Ok(trace.output)
    }

    pub fn neighbor_graph(&self, points: &[Vec3]) -> NeighborGraph {
        NeighborGraph::build(points, self.config.decoder_neighbors)
    }

    /// Full forward pass, keeping what the backward pass needs.
    pub fn trace(&self, points: &[Vec3], hints: Option<&Matrix>) -> Result<Trace> {
        let mut trace = self.backbone_trace(points)?;
        let graph = self.neighbor_graph(points);
        self.decoder_trace(&mut trace, hints, &graph)?;
        Ok(trace)
    }

    pub fn forward(&self, sample: &HintedSample) -> Result<Matrix> {
        Ok(self.trace(&sample.points, Some(&sample.hints))?.output)
    }

    pub fn backward(&self, sample: &HintedSample, loss_grad: &Matrix) -> Result<Gradients> {
        let trace = self.trace(&sample.points, Some(&sample.hints))?;
        self.backward_trace(&trace, loss_grad)
    }

    /// Reverse pass for a recorded forward pass; `loss_grad` holds the
    /// partials of the scalar loss with respect to every output entry.
    pub fn backward_trace(&self, trace: &Trace, loss_grad: &Matrix) -> Result<Gradients> {
        if loss_grad.shape() != trace.output.shape() {
            return Err(Error::shape(format!(
                "loss gradient is {}x{}, outputs are {}x{}",
                loss_grad.rows(),
                loss_grad.cols(),
                trace.output.rows(),
                trace.output.cols()
            )));
        }
        let mut grads = self.weights.zeros_like();
        let ne = self.n_encoder();
        let (enc_grads, rest) = grads.layers.split_at_mut(ne);
        let (global_grad, rest) = rest.split_first_mut().expect("global layer");
        let (mix_grad, dec_grads) = rest.split_first_mut().expect("mix layer");

        // Decoder, output layer first.
        let layers = self.decoder_layers();
        let hidden = layers.len() - 1;
        let pooling = self.config.decoder_neighbors > 0;
        let mut dx = layers[hidden]
            .backward(&trace.decoder_inputs[hidden], loss_grad, &mut dec_grads[hidden], true)
            .expect("dx requested");
        for l in (0..hidden).rev() {
            // `dx` is the gradient w.r.t. the input of layer l + 1, i.e. the
            // (possibly pooled) output of layer l.
            let mut dh = if l == 0 && pooling {
                let width = layers[0].fan_out();
                let mut dh = Matrix::zeros(dx.rows(), width);
                for i in 0..dx.rows() {
                    let row = dx.row(i);
                    for c in 0..width {
                        dh.set(i, c, dh.get(i, c) + row[c]);
                        let g = row[width + c];
                        if g != 0.0 {
                            let j = trace.neighbor_argmax[i * width + c];
                            dh.set(j, c, dh.get(j, c) + g);
                        }
                    }
                }
                dh
            } else {
                dx
            };
            // The post-activation of layer l is the input of layer l + 1, or
            // its left half when that input is the pooled concatenation.
            if l == 0 && pooling {
                relu_mask(&mut dh, &trace.decoder_inputs[1].hsplit(layers[0].fan_out()).0);
            } else {
                relu_mask(&mut dh, &trace.decoder_inputs[l + 1]);
            }
            dx = layers[l].backward(&trace.decoder_inputs[l], &dh, &mut dec_grads[l], true).expect("dx requested");
        }

        // Only the feature part of the decoder input flows into the backbone.
        let d_features = if self.config.hint_width() > 0 { dx.hsplit(self.config.feature_dim).0 } else { dx };

        let d_mix_in = self.mix_layer().backward(&trace.mix_in, &d_features, mix_grad, true).expect("dx requested");
        let width = trace.pooled.len();
        let n = d_mix_in.rows();
        let mut d_last = Matrix::zeros(n, width);
        let mut d_global = vec![0.0; trace.global.len()];
        for i in 0..n {
            let row = d_mix_in.row(i);
            d_last.row_mut(i).copy_from_slice(&row[..width]);
            for (g, &v) in d_global.iter_mut().zip(&row[width..]) {
                *g += v;
            }
        }
        for (g, &a) in d_global.iter_mut().zip(&trace.global) {
            if a <= 0.0 {
                *g = 0.0;
            }
        }
        let d_pooled = self
            .global_layer()
            .backward(
                &Matrix::from_vec(1, width, trace.pooled.clone())?,
                &Matrix::from_vec(1, d_global.len(), d_global)?,
                global_grad,
                true,
            )
            .expect("dx requested");
        for (c, &g) in d_pooled.row(0).iter().enumerate() {
            let i = trace.pool_argmax[c];
            d_last.set(i, c, d_last.get(i, c) + g);
        }

        let mut dh = d_last;
        for l in (0..ne).rev() {
            relu_mask(&mut dh, &trace.encoder_acts[l + 1]);
            let need_dx = l > 0;
            let next = self.weights.layers[l].backward(&trace.encoder_acts[l], &dh, &mut enc_grads[l], need_dx);
            match next {
                Some(d) => dh = d,
                None => break,
            }
        }
        Ok(grads)
    }
}

/// `[h | max over neighbors of h]` and the winning neighbor per entry.
fn neighbor_max(h: &Matrix, graph: &NeighborGraph) -> Result<(Matrix, Vec<usize>)> {
    let (n, width) = h.shape();
    if graph.k == 0 {
        return Err(Error::invalid("neighbor graph is empty"));
    }
    let mut out = Matrix::zeros(n, 2 * width);
    let mut argmax = vec![0usize; n * width];
    for i in 0..n {
        let nbrs = graph.neighbors(i);
        let mut best = vec![f64::NEG_INFINITY; width];
        let win = &mut argmax[i * width..(i + 1) * width];
        for &j in nbrs {
            for (c, &v) in h.row(j).iter().enumerate() {
                if v > best[c] || (v == best[c] && j < win[c]) {
                    best[c] = v;
                    win[c] = j;
                }
            }
        }
        let row = out.row_mut(i);
        row[..width].copy_from_slice(h.row(i));
        row[width..].copy_from_slice(&best);
    }
    Ok((out, argmax))
}

/// Row-wise argmax, ties to the lowest class.
pub fn predict(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best })
        })
        .collect()
}
