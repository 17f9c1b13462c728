//! Flat `key = value` text used for run configs, scene specs and checkpoint
//! metadata. Floats are written in shortest round-trip form, so text
//! round-trips are exact.

use std::fmt::Display;
use std::str::FromStr;

use gpc_core::hinting::SeedStrategy;
use gpc_core::losses::LossKind;
use gpc_core::model::{Head, ModelConfig};
use gpc_core::synth::{ColorMode, SceneSpec};
use gpc_core::trainer::TrainConfig;

use crate::error::{Error, Result};

/// One `key = value` entry and its 1-based line number.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Blank lines and `#` comments are skipped; repeated keys are an error.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(format!("line {}: expected 'key = value'", i + 1)))?;
        let key = k.trim().to_string();
        if out.iter().any(|e| e.key == key) {
            return Err(Error::format(format!("line {}: '{key}' given twice", i + 1)));
        }
        out.push(Entry { line: i + 1, key, value: v.trim().to_string() });
    }
    Ok(out)
}

pub fn render(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

fn parse<T: FromStr>(e: &Entry) -> Result<T> {
    e.value
        .parse()
        .map_err(|_| Error::format(format!("line {}: bad value '{}' for {}", e.line, e.value, e.key)))
}

fn parse_list(e: &Entry) -> Result<Vec<usize>> {
    if e.value.is_empty() {
        return Ok(Vec::new());
    }
    e.value
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| Error::format(format!("line {}: bad list '{}' for {}", e.line, e.value, e.key))))
        .collect()
}

fn list(v: &[usize]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn named<T>(e: &Entry, f: impl Fn(&str) -> Option<T>) -> Result<T> {
    f(&e.value).ok_or_else(|| Error::format(format!("line {}: unknown {} '{}'", e.line, e.key, e.value)))
}

fn s(v: impl Display) -> String {
    v.to_string()
}

pub fn strategy_from_name(name: &str) -> Option<SeedStrategy> {
    match name {
        "uniform" => Some(SeedStrategy::Uniform),
        "balanced" => Some(SeedStrategy::Balanced),
        _ => None,
    }
}

pub fn strategy_name(s: SeedStrategy) -> &'static str {
    match s {
        SeedStrategy::Uniform => "uniform",
        SeedStrategy::Balanced => "balanced",
    }
}

fn head_name(h: Head) -> &'static str {
    match h {
        Head::Classification => "classification",
        Head::Regression => "regression",
    }
}

fn head_from_name(name: &str) -> Option<Head> {
    match name {
        "classification" => Some(Head::Classification),
        "regression" => Some(Head::Regression),
        _ => None,
    }
}

pub fn train_pairs(c: &TrainConfig) -> Vec<(&'static str, String)> {
    let a = &c.augment;
    vec![
        ("epochs", s(c.epochs)),
        ("batch_size", s(c.batch_size)),
        ("lr", s(c.max_lr)),
        ("beta1", s(c.adam.beta1)),
        ("beta2", s(c.adam.beta2)),
        ("adam_eps", s(c.adam.eps)),
        ("weight_decay", s(c.adam.weight_decay)),
        ("seed_ratio", s(c.seed_ratio)),
        ("seed_strategy", s(strategy_name(c.seed_strategy))),
        ("loss", s(c.loss.name())),
        ("seed", s(c.rng_seed)),
        ("flip_prob", s(a.flip_prob)),
        ("rot_range", s(a.rot_range)),
        ("scale_min", s(a.scale_range.0)),
        ("scale_max", s(a.scale_range.1)),
        ("target_points", s(a.target_points)),
        ("range_m", s(a.range_m)),
        ("shuffle", s(a.shuffle)),
        ("balance_epsilon", s(c.balance_epsilon)),
        ("smooth_l1_beta", s(c.smooth_l1_beta)),
    ]
}

/// Applies one entry to a train config; returns false for keys it does not own.
pub fn set_train(c: &mut TrainConfig, e: &Entry) -> Result<bool> {
    let a = &mut c.augment;
    match e.key.as_str() {
        "epochs" => c.epochs = parse(e)?,
        "batch_size" => c.batch_size = parse(e)?,
        "lr" => c.max_lr = parse(e)?,
        "beta1" => c.adam.beta1 = parse(e)?,
        "beta2" => c.adam.beta2 = parse(e)?,
        "adam_eps" => c.adam.eps = parse(e)?,
        "weight_decay" => c.adam.weight_decay = parse(e)?,
        "seed_ratio" => c.seed_ratio = parse(e)?,
        "seed_strategy" => c.seed_strategy = named(e, strategy_from_name)?,
        "loss" => c.loss = named(e, LossKind::from_name)?,
        "seed" => c.rng_seed = parse(e)?,
        "flip_prob" => a.flip_prob = parse(e)?,
        "rot_range" => a.rot_range = parse(e)?,
        "scale_min" => a.scale_range.0 = parse(e)?,
        "scale_max" => a.scale_range.1 = parse(e)?,
        "target_points" => a.target_points = parse(e)?,
        "range_m" => a.range_m = parse(e)?,
        "shuffle" => a.shuffle = parse(e)?,
        "balance_epsilon" => c.balance_epsilon = parse(e)?,
        "smooth_l1_beta" => c.smooth_l1_beta = parse(e)?,
        _ => return Ok(false),
    }
    Ok(true)
}

pub fn model_pairs(m: &ModelConfig) -> Vec<(&'static str, String)> {
    vec![
        ("classes", s(m.classes)),
        ("feature_dim", s(m.feature_dim)),
        ("encoder_widths", list(&m.encoder_widths)),
        ("global_width", s(m.global_width)),
        ("decoder_widths", list(&m.decoder_widths)),
        ("decoder_neighbors", s(m.decoder_neighbors)),
        ("head", s(head_name(m.head))),
    ]
}

pub fn set_model(m: &mut ModelConfig, e: &Entry) -> Result<bool> {
    match e.key.as_str() {
        "classes" => m.classes = parse(e)?,
        "feature_dim" => m.feature_dim = parse(e)?,
        "encoder_widths" => m.encoder_widths = parse_list(e)?,
        "global_width" => m.global_width = parse(e)?,
        "decoder_widths" => m.decoder_widths = parse_list(e)?,
        "decoder_neighbors" => m.decoder_neighbors = parse(e)?,
        "head" => m.head = named(e, head_from_name)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Training plus model settings, as read from a run config file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { model: ModelConfig::new(128), train: TrainConfig::default() }
    }
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for e in parse_entries(text)? {
            if !set_train(&mut cfg.train, &e)? && !set_model(&mut cfg.model, &e)? {
                return Err(Error::format(format!("line {}: unknown key '{}'", e.line, e.key)));
            }
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut pairs = train_pairs(&self.train);
        pairs.extend(model_pairs(&self.model));
        render(&pairs)
    }
}

/// A scene spec plus the number of frames to generate. Frame `i` uses
/// `seed + i` and `color_seed + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub scene: SceneSpec,
    pub frames: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec { scene: SceneSpec::default(), frames: 1 }
    }
}

fn mode_name(m: ColorMode) -> &'static str {
    match m {
        ColorMode::Fixed => "fixed",
        ColorMode::Variant => "variant",
    }
}

fn mode_from_name(name: &str) -> Option<ColorMode> {
    match name {
        "fixed" => Some(ColorMode::Fixed),
        "variant" => Some(ColorMode::Variant),
        _ => None,
    }
}

impl SynthSpec {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut spec = SynthSpec::default();
        let sc = &mut spec.scene;
        for e in parse_entries(text)? {
            match e.key.as_str() {
                "frames" => spec.frames = parse(&e)?,
                "n_boxes" => sc.n_boxes = parse(&e)?,
                "points_per_box" => sc.points_per_box = parse(&e)?,
                "ground_points" => sc.ground_points = parse(&e)?,
                "palette_size" => sc.palette_size = parse(&e)?,
                "object_colors" => sc.object_colors = parse(&e)?,
                "color_mode" => sc.color_mode = named(&e, mode_from_name)?,
                "noise_sigma" => sc.noise_sigma = parse(&e)?,
                "extent_m" => sc.extent_m = parse(&e)?,
                "seed" => sc.rng_seed = parse(&e)?,
                "color_seed" => sc.color_seed = parse(&e)?,
                _ => return Err(Error::format(format!("line {}: unknown key '{}'", e.line, e.key))),
            }
        }
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let sc = &self.scene;
        render(&[
            ("frames", s(self.frames)),
            ("n_boxes", s(sc.n_boxes)),
            ("points_per_box", s(sc.points_per_box)),
            ("ground_points", s(sc.ground_points)),
            ("palette_size", s(sc.palette_size)),
            ("object_colors", s(sc.object_colors)),
            ("color_mode", s(mode_name(sc.color_mode))),
            ("noise_sigma", s(sc.noise_sigma)),
            ("extent_m", s(sc.extent_m)),
            ("seed", s(sc.rng_seed)),
            ("color_seed", s(sc.color_seed)),
        ])
    }

    /// The spec of frame `i`.
    pub fn frame(&self, i: usize) -> SceneSpec {
        SceneSpec {
            rng_seed: self.scene.rng_seed.wrapping_add(i as u64),
            color_seed: self.scene.color_seed.wrapping_add(i as u64),
            ..self.scene.clone()
        }
    }
}
