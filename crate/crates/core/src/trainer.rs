//! The pre-training loop, evaluation, colorization and feature export.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::augment::{compose, AugmentConfig, Sample};
use crate::geometry::{ColoredPointCloud, Rgb, Vec3};
use crate::hinting::{encode_hints, make_hints_balanced, make_hints_uniform, SeedStrategy};
use crate::losses::{balanced_softmax_sum, batch_class_weights, mse_sum, smooth_l1_sum, ClassWeights, LossKind, DEFAULT_EPSILON};
use crate::matrix::Matrix;
use crate::model::{predict, Gradients, Head, ModelConfig, ModelParams};
use crate::optim::{adamw_step, cosine_lr, AdamWConfig, OptimizerState};
use crate::palette::{assign_labels, ColorPalette};
use crate::rng::{self, op};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    pub adam: AdamWConfig,
    pub seed_ratio: f64,
    pub seed_strategy: SeedStrategy,
    pub loss: LossKind,
    pub rng_seed: u64,
    pub augment: AugmentConfig,
    /// Smoothing added to per-batch class counts for the balanced softmax.
    pub balance_epsilon: f64,
    pub smooth_l1_beta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 80,
            batch_size: 16,
            max_lr: 0.001,
            adam: AdamWConfig::default(),
            seed_ratio: 0.2,
            seed_strategy: SeedStrategy::Uniform,
            loss: LossKind::BalancedSoftmax,
            rng_seed: 0,
            augment: AugmentConfig::default(),
            balance_epsilon: DEFAULT_EPSILON,
            smooth_l1_beta: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be at least 1"));
        }
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return Err(Error::invalid("max_lr must be positive"));
        }
        if !(0.0..=1.0).contains(&self.seed_ratio) {
            return Err(Error::invalid("seed_ratio must lie in [0, 1]"));
        }
        if !(self.balance_epsilon > 0.0) || !(self.smooth_l1_beta > 0.0) {
            return Err(Error::invalid("balance_epsilon and smooth_l1_beta must be positive"));
        }
        self.augment.validate()
    }
}

/// Runs independent per-frame jobs. Implementations must return results in
/// job order; the trainer reduces them in that order, so the outcome does not
/// depend on how jobs are scheduled.
pub trait Executor {
    fn map<R: Send>(&self, jobs: usize, f: &(dyn Fn(usize) -> R + Sync)) -> Vec<R>;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl Executor for Serial {
    fn map<R: Send>(&self, jobs: usize, f: &(dyn Fn(usize) -> R + Sync)) -> Vec<R> {
        (0..jobs).map(f).collect()
    }
}

/// Accuracy and loss tallies. Accuracies on unknown points never count
/// seeds; the per-class tallies are over unknown points.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metrics {
    pub loss_sum: f64,
    pub points: usize,
    pub correct: usize,
    pub unknown: usize,
    pub unknown_correct: usize,
    pub class_unknown: Vec<usize>,
    pub class_unknown_correct: Vec<usize>,
}

impl Metrics {
    pub fn new(classes: usize) -> Self {
        Metrics { class_unknown: vec![0; classes], class_unknown_correct: vec![0; classes], ..Default::default() }
    }

    fn record(&mut self, labels: &[usize], predicted: &[usize], seed_mask: &[bool]) {
        for ((&y, &p), &seed) in labels.iter().zip(predicted).zip(seed_mask) {
            let hit = (y == p) as usize;
            self.points += 1;
            self.correct += hit;
            if !seed {
                self.unknown += 1;
                self.unknown_correct += hit;
                self.class_unknown[y] += 1;
                self.class_unknown_correct[y] += hit;
            }
        }
    }

    pub fn merge(&mut self, other: &Metrics) {
        self.loss_sum += other.loss_sum;
        self.points += other.points;
        self.correct += other.correct;
        self.unknown += other.unknown;
        self.unknown_correct += other.unknown_correct;
        for (a, b) in self.class_unknown.iter_mut().zip(&other.class_unknown) {
            *a += b;
        }
        for (a, b) in self.class_unknown_correct.iter_mut().zip(&other.class_unknown_correct) {
            *a += b;
        }
    }

    pub fn mean_loss(&self) -> f64 {
        if self.points == 0 {
            0.0
        } else {
            self.loss_sum / self.points as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.points == 0 {
            0.0
        } else {
            self.correct as f64 / self.points as f64
        }
    }

    /// `None` when every point was a seed.
    pub fn unknown_accuracy(&self) -> Option<f64> {
        (self.unknown > 0).then(|| self.unknown_correct as f64 / self.unknown as f64)
    }

    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        self.class_unknown
            .iter()
            .zip(&self.class_unknown_correct)
            .map(|(&n, &c)| (n > 0).then(|| c as f64 / n as f64))
            .collect()
    }

    /// Mean of the per-class accuracies over classes that occur.
    pub fn mean_class_accuracy(&self) -> Option<f64> {
        let present: Vec<f64> = self.per_class_accuracy().into_iter().flatten().collect();
        (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Learning rate of the epoch's first step.
    pub lr: f64,
    pub metrics: Metrics,
}

/// A frame ready for the model: augmented points with labels, targets and hints.
struct PreparedFrame {
    points: Vec<Vec3>,
    colors: Vec<Rgb>,
    labels: Vec<usize>,
    seed_mask: Vec<bool>,
    hints: Option<Matrix>,
}

fn choose_seeds(labels: &[usize], classes: usize, ratio: f64, strategy: SeedStrategy, key: &[u64]) -> Result<Vec<bool>> {
    let mut rng = rng::stream(key);
    match strategy {
        SeedStrategy::Uniform => make_hints_uniform(labels.len(), ratio, &mut rng),
        SeedStrategy::Balanced => make_hints_balanced(labels, classes, ratio, &mut rng),
    }
}

fn prepare_frame(sample: Sample<Rgb>, palette: &ColorPalette, head: Head, ratio: f64, strategy: SeedStrategy, key: &[u64]) -> Result<PreparedFrame> {
    let labels = assign_labels(palette, &sample.attrs);
    let (seed_mask, hints) = match head {
        Head::Classification => {
            let mask = choose_seeds(&labels, palette.k(), ratio, strategy, key)?;
            let hints = encode_hints(&labels, &mask, palette.k())?;
            (mask, Some(hints))
        }
        // The regression head takes no hints; every point is unknown.
        Head::Regression => (vec![false; labels.len()], None),
    };
    Ok(PreparedFrame { points: sample.points, colors: sample.attrs, labels, seed_mask, hints })
}

struct FrameOutcome {
    loss_sum: f64,
    grads: Option<Gradients>,
    predicted: Vec<usize>,
}

struct Objective<'a> {
    kind: LossKind,
    weights: &'a ClassWeights,
    beta: f64,
    normalizer: f64,
}

fn run_frame(params: &ModelParams, frame: &PreparedFrame, palette: &ColorPalette, obj: &Objective<'_>, with_grads: bool) -> Result<FrameOutcome> {
    let trace = params.trace(&frame.points, frame.hints.as_ref())?;
    let out = trace.output();
    let (loss, predicted) = match obj.kind {
        LossKind::BalancedSoftmax | LossKind::CrossEntropy => {
            (balanced_softmax_sum(out, &frame.labels, obj.weights, obj.normalizer)?, predict(out))
        }
        LossKind::Mse | LossKind::SmoothL1 => {
            let loss = if obj.kind == LossKind::Mse {
                // Mean over channels as well as points.
                let mut l = mse_sum(out, &frame.colors, 3.0 * obj.normalizer)?;
                l.value /= 3.0;
                l
            } else {
                let mut l = smooth_l1_sum(out, &frame.colors, obj.beta, 3.0 * obj.normalizer)?;
                l.value /= 3.0;
                l
            };
            let colors: Vec<Rgb> = (0..out.rows()).map(|i| [out.get(i, 0), out.get(i, 1), out.get(i, 2)]).collect();
            (loss, assign_labels(palette, &colors))
        }
    };
    let grads = if with_grads { Some(params.backward_trace(&trace, &loss.grad)?) } else { None };
    Ok(FrameOutcome { loss_sum: loss.value, grads, predicted })
}

fn check_head(config: &ModelConfig, loss: LossKind, palette: &ColorPalette) -> Result<()> {
    let head_ok = match config.head {
        Head::Classification => !loss.is_regression(),
        Head::Regression => loss.is_regression(),
    };
    if !head_ok {
        return Err(Error::invalid(format!("loss '{}' does not fit the model head", loss.name())));
    }
    if config.head == Head::Classification && config.classes != palette.k() {
        return Err(Error::invalid(format!(
            "model has {} classes but the palette has {}",
            config.classes,
            palette.k()
        )));
    }
    Ok(())
}

/// Model, optimizer and schedule position. Everything needed to resume.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub config: TrainConfig,
    pub epochs_done: usize,
}

impl Trainer {
    pub fn new(model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(model_config, config.rng_seed)?;
        let optimizer = OptimizerState::new(&params.weights);
        Ok(Trainer { params, optimizer, config, epochs_done: 0 })
    }

    pub fn steps_per_epoch(&self, frames: usize) -> u64 {
        frames.div_ceil(self.config.batch_size) as u64
    }

    pub fn total_steps(&self, frames: usize) -> u64 {
        self.steps_per_epoch(frames) * self.config.epochs as u64
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_done >= self.config.epochs
    }

    /// Runs one epoch over `dataset`.
    pub fn train_epoch<E: Executor>(&mut self, dataset: &[ColoredPointCloud], palette: &ColorPalette, exec: &E) -> Result<EpochMetrics> {
        if dataset.is_empty() {
            return Err(Error::invalid("empty training set"));
        }
        check_head(&self.params.config, self.config.loss, palette)?;
        let cfg = self.config.clone();
        let epoch = self.epochs_done as u64;
        let total = self.total_steps(dataset.len());
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng::stream(&[cfg.rng_seed, epoch, op::FRAME_ORDER]));

        let classes = palette.k();
        let mut metrics = Metrics::new(classes);
        let first_lr = cosine_lr(self.optimizer.step, total, cfg.max_lr);
        for batch in order.chunks(cfg.batch_size) {
            let head = self.params.config.head;
            let frames: Vec<Result<PreparedFrame>> = exec.map(batch.len(), &|b| {
                let idx = batch[b] as u64;
                let sample = Sample::from(&dataset[batch[b]]);
                let sample = compose(&sample, &cfg.augment, cfg.rng_seed, (epoch << 32) | idx)?;
                prepare_frame(sample, palette, head, cfg.seed_ratio, cfg.seed_strategy, &[cfg.rng_seed, epoch, idx, op::HINTS])
            });
            let frames = frames.into_iter().collect::<Result<Vec<_>>>()?;

            let weights = match cfg.loss {
                LossKind::BalancedSoftmax => {
                    batch_class_weights(frames.iter().flat_map(|f| &f.labels), classes, cfg.balance_epsilon)?
                }
                _ => ClassWeights::uniform(classes),
            };
            let normalizer = frames.iter().map(|f| f.labels.len()).sum::<usize>() as f64;
            let obj = Objective { kind: cfg.loss, weights: &weights, beta: cfg.smooth_l1_beta, normalizer };
            let params = &self.params;
            let outcomes = exec.map(frames.len(), &|b| run_frame(params, &frames[b], palette, &obj, true));

            let mut grads = self.params.weights.zeros_like();
            for (frame, outcome) in frames.iter().zip(outcomes) {
                let outcome = outcome?;
                grads.add_assign(outcome.grads.as_ref().expect("gradients requested"));
                metrics.loss_sum += outcome.loss_sum;
                metrics.record(&frame.labels, &outcome.predicted, &frame.seed_mask);
            }
            let lr = cosine_lr(self.optimizer.step, total, cfg.max_lr);
            adamw_step(&mut self.params.weights, &grads, &mut self.optimizer, lr, &cfg.adam)?;
        }
        if !self.params.weights.is_finite() {
            return Err(Error::NonFinite("parameters after update".into()));
        }
        self.epochs_done += 1;
        Ok(EpochMetrics { epoch: self.epochs_done, lr: first_lr, metrics })
    }

    /// Trains until `config.epochs` epochs are done.
    pub fn run<E: Executor>(&mut self, dataset: &[ColoredPointCloud], palette: &ColorPalette, exec: &E) -> Result<Vec<EpochMetrics>> {
        let mut log = Vec::new();
        while !self.is_finished() {
            log.push(self.train_epoch(dataset, palette, exec)?);
        }
        Ok(log)
    }
}

/// Trains a fresh model single-threaded.
pub fn train(dataset: &[ColoredPointCloud], palette: &ColorPalette, model_config: ModelConfig, config: TrainConfig) -> Result<(Trainer, Vec<EpochMetrics>)> {
    if dataset.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let mut trainer = Trainer::new(model_config, config)?;
    let log = trainer.run(dataset, palette, &Serial)?;
    Ok((trainer, log))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub seed_ratio: f64,
    pub seed_strategy: SeedStrategy,
    pub rng_seed: u64,
}

impl EvalOptions {
    pub fn new(seed_ratio: f64, rng_seed: u64) -> Self {
        EvalOptions { seed_ratio, seed_strategy: SeedStrategy::Uniform, rng_seed }
    }
}

/// Metrics of every frame, without augmentation or parameter updates. Loss
/// is cross-entropy for the classification head and MSE for regression.
pub fn evaluate_frames<E: Executor>(params: &ModelParams, dataset: &[ColoredPointCloud], palette: &ColorPalette, opts: &EvalOptions, exec: &E) -> Result<Vec<Metrics>> {
    if !(0.0..=1.0).contains(&opts.seed_ratio) {
        return Err(Error::invalid("seed_ratio must lie in [0, 1]"));
    }
    let head = params.config.head;
    let kind = match head {
        Head::Classification => LossKind::CrossEntropy,
        Head::Regression => LossKind::Mse,
    };
    check_head(&params.config, kind, palette)?;
    let weights = ClassWeights::uniform(palette.k());
    let results = exec.map(dataset.len(), &|i| -> Result<Metrics> {
        let sample = Sample::from(&dataset[i]);
        let frame = prepare_frame(sample, palette, head, opts.seed_ratio, opts.seed_strategy, &[opts.rng_seed, i as u64, op::HINTS])?;
        let obj = Objective { kind, weights: &weights, beta: 1.0, normalizer: 1.0 };
        let outcome = run_frame(params, &frame, palette, &obj, false)?;
        let mut m = Metrics::new(palette.k());
        m.loss_sum = outcome.loss_sum;
        m.record(&frame.labels, &outcome.predicted, &frame.seed_mask);
        Ok(m)
    });
    results.into_iter().collect()
}

pub fn evaluate(params: &ModelParams, dataset: &[ColoredPointCloud], palette: &ColorPalette, opts: &EvalOptions) -> Result<Metrics> {
    let mut total = Metrics::new(palette.k());
    for m in evaluate_frames(params, dataset, palette, opts, &Serial)? {
        total.merge(&m);
    }
    Ok(total)
}

/// `[x y z | backbone features]`, one row per point.
pub fn export_features(params: &ModelParams, points: &[Vec3]) -> Result<Matrix> {
    let features = params.backbone_forward(points)?;
    let coords = Matrix::from_vec(points.len(), 3, points.iter().flatten().copied().collect())?;
    coords.hconcat(&features)
}

/// Per-point labels and colors predicted with the given `(point, label)`
/// seeds revealed.
pub fn colorize(params: &ModelParams, points: &[Vec3], palette: &ColorPalette, seeds: &[(usize, usize)]) -> Result<(Vec<usize>, Vec<Rgb>)> {
    let n = points.len();
    let out = match params.config.head {
        Head::Classification => {
            if params.config.classes != palette.k() {
                return Err(Error::invalid("palette does not match the model's class count"));
            }
            let mut labels = vec![0usize; n];
            let mut mask = vec![false; n];
            for &(i, l) in seeds {
                if i >= n {
                    return Err(Error::invalid(format!("seed index {i} out of range for {n} points")));
                }
                if l >= palette.k() {
                    return Err(Error::LabelOutOfRange { label: l, classes: palette.k() });
                }
                labels[i] = l;
                mask[i] = true;
            }
            let hints = encode_hints(&labels, &mask, palette.k())?;
            params.trace(points, Some(&hints))?
        }
        Head::Regression => params.trace(points, None)?,
    };
    let out = out.output();
    let labels = match params.config.head {
        Head::Classification => predict(out),
        Head::Regression => {
            let colors: Vec<Rgb> = (0..n).map(|i| [out.get(i, 0), out.get(i, 1), out.get(i, 2)]).collect();
            assign_labels(palette, &colors)
        }
    };
    let colors = labels.iter().map(|&l| palette.centroid(l)).collect();
    Ok((labels, colors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PointCloud;

    fn tiny_dataset() -> (Vec<ColoredPointCloud>, ColorPalette) {
        let palette = ColorPalette::from_rgb(&[[0.2, 0.2, 0.2], [0.9, 0.1, 0.1]]).unwrap();
        let mut frames = Vec::new();
        for f in 0..3u64 {
            let mut r = rng::stream(&[f, 77]);
            let mut pts = Vec::new();
            let mut cols = Vec::new();
            for _ in 0..40 {
                let p = [rng::uniform(&mut r, -5.0, 5.0), rng::uniform(&mut r, -5.0, 5.0), rng::uniform(&mut r, 0.0, 2.0)];
                cols.push(if p[2] > 1.0 { [0.9, 0.1, 0.1] } else { [0.2, 0.2, 0.2] });
                pts.push(p);
            }
            frames.push(ColoredPointCloud::new(PointCloud::new(pts).unwrap(), cols).unwrap());
        }
        (frames, palette)
    }

    fn small_model() -> ModelConfig {
        ModelConfig {
            classes: 2,
            feature_dim: 8,
            encoder_widths: vec![8, 8],
            global_width: 4,
            decoder_widths: vec![8],
            decoder_neighbors: 4,
            head: Head::Classification,
        }
    }

    fn small_train() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 2,
            max_lr: 0.01,
            augment: AugmentConfig { target_points: 32, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn metrics_arithmetic() {
        let mut m = Metrics::new(3);
        m.record(&[0, 1, 2, 2], &[0, 0, 2, 1], &[true, false, false, false]);
        assert_eq!(m.accuracy(), 0.5);
        assert_eq!(m.unknown_accuracy(), Some(1.0 / 3.0));
        assert_eq!(m.per_class_accuracy(), vec![None, Some(0.0), Some(0.5)]);
        assert_eq!(m.mean_class_accuracy(), Some(0.25));
        let mut all_seeds = Metrics::new(2);
        all_seeds.record(&[0], &[0], &[true]);
        assert_eq!(all_seeds.unknown_accuracy(), None);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let (_, palette) = tiny_dataset();
        assert!(train(&[], &palette, small_model(), small_train()).is_err());
    }

    #[test]
    fn head_and_loss_must_agree() {
        let (data, palette) = tiny_dataset();
        let cfg = TrainConfig { loss: LossKind::Mse, ..small_train() };
        assert!(train(&data, &palette, small_model(), cfg).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let (data, palette) = tiny_dataset();
        let (a, log_a) = train(&data, &palette, small_model(), small_train()).unwrap();
        let (b, log_b) = train(&data, &palette, small_model(), small_train()).unwrap();
        assert_eq!(a, b);
        assert_eq!(log_a, log_b);
        assert_eq!(log_a.len(), 3);
        assert_eq!(a.optimizer.step, 6);
        assert_eq!(log_a[0].lr, 0.01);
    }

    #[test]
    fn regression_head_trains() {
        let (data, palette) = tiny_dataset();
        let model = ModelConfig { head: Head::Regression, ..small_model() };
        for loss in [LossKind::Mse, LossKind::SmoothL1] {
            let cfg = TrainConfig { loss, ..small_train() };
            let (trainer, log) = train(&data, &palette, model.clone(), cfg).unwrap();
            assert!(log.iter().all(|e| e.metrics.mean_loss().is_finite()));
            let m = evaluate(&trainer.params, &data, &palette, &EvalOptions::new(0.2, 0)).unwrap();
            // No hints for regression: every point is unknown.
            assert_eq!(m.unknown, m.points);
        }
    }

    #[test]
    fn eval_counts_seeds_separately() {
        let (data, palette) = tiny_dataset();
        let params = ModelParams::init(small_model(), 1).unwrap();
        let m = evaluate(&params, &data, &palette, &EvalOptions::new(0.25, 3)).unwrap();
        assert_eq!(m.points, 120);
        assert_eq!(m.unknown, 90);
        let full = evaluate(&params, &data, &palette, &EvalOptions::new(1.0, 3)).unwrap();
        assert_eq!(full.unknown_accuracy(), None);
    }

    #[test]
    fn features_and_colorize() {
        let (data, palette) = tiny_dataset();
        let params = ModelParams::init(small_model(), 2).unwrap();
        let pts = data[0].points();
        let x = export_features(&params, pts).unwrap();
        assert_eq!(x.cols(), 3 + 8);
        let f = params.backbone_forward(pts).unwrap();
        for i in 0..pts.len() {
            assert_eq!(&x.row(i)[..3], &pts[i]);
            assert_eq!(&x.row(i)[3..], f.row(i));
        }
        let (labels, colors) = colorize(&params, pts, &palette, &[(0, 1)]).unwrap();
        assert_eq!(labels.len(), pts.len());
        assert_eq!(colors[0], palette.centroid(labels[0]));
        assert!(colorize(&params, pts, &palette, &[(pts.len(), 0)]).is_err());
        assert!(colorize(&params, pts, &palette, &[(0, 2)]).is_err());
    }
}
