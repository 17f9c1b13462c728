//! Stochastic point-cloud augmentation: flip, rotate, scale, range-limited
//! resampling to a fixed size, and shuffling.

use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_4;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::geometry::{ColoredPointCloud, Rgb, Vec3};
use crate::math::{cos, norm, sin};
use crate::rng::{self, op};
use crate::{Error, Result};

/// Points with one attribute per point (a color, a label, an id, ...).
///
/// Geometric augmentations touch only `points`; reorderings move `attrs`
/// together with their points.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<A> {
    pub points: Vec<Vec3>,
    pub attrs: Vec<A>,
}

impl<A: Clone> Sample<A> {
    pub fn new(points: Vec<Vec3>, attrs: Vec<A>) -> Result<Self> {
        if points.len() != attrs.len() {
            return Err(Error::shape(alloc::format!(
                "{} points but {} attributes",
                points.len(),
                attrs.len()
            )));
        }
        Ok(Sample { points, attrs })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn select(&self, idx: &[usize]) -> Self {
        Sample {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            attrs: idx.iter().map(|&i| self.attrs[i].clone()).collect(),
        }
    }
}

impl From<&ColoredPointCloud> for Sample<Rgb> {
    fn from(c: &ColoredPointCloud) -> Self {
        Sample { points: c.cloud.points.clone(), attrs: c.colors.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Rotations are drawn from `[-rot_range, rot_range]` radians.
    pub rot_range: f64,
    pub scale_range: (f64, f64),
    pub target_points: usize,
    pub range_m: f64,
    pub shuffle: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_prob: 0.5,
            rot_range: FRAC_PI_4,
            scale_range: (0.95, 1.05),
            target_points: 16384,
            range_m: 40.0,
            shuffle: true,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::invalid("flip_prob must lie in [0, 1]"));
        }
        if !(self.rot_range >= 0.0 && self.rot_range.is_finite()) {
            return Err(Error::invalid("rot_range must be a finite non-negative angle"));
        }
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::invalid("scale_range must satisfy 0 < lo <= hi"));
        }
        if self.target_points == 0 {
            return Err(Error::invalid("target_points must be at least 1"));
        }
        if !(self.range_m > 0.0) {
            return Err(Error::invalid("range_m must be positive"));
        }
        Ok(())
    }
}

/// Mirrors across the x-z plane (negates y) when `draw < flip_prob`.
pub fn random_flip<A>(mut sample: Sample<A>, draw: f64, flip_prob: f64) -> Sample<A> {
    if draw < flip_prob {
        for p in &mut sample.points {
            p[1] = -p[1];
        }
    }
    sample
}

/// Rotates about the vertical (z) axis.
pub fn random_rotate<A>(mut sample: Sample<A>, angle: f64) -> Sample<A> {
    let (s, c) = (sin(angle), cos(angle));
    for p in &mut sample.points {
        let (x, y) = (p[0], p[1]);
        p[0] = c * x - s * y;
        p[1] = s * x + c * y;
    }
    sample
}

pub fn random_scale<A>(mut sample: Sample<A>, scale: f64) -> Sample<A> {
    for p in &mut sample.points {
        for c in p.iter_mut() {
            *c *= scale;
        }
    }
    sample
}

/// Returns exactly `target_points` points drawn from those within `range_m`
/// of the origin: without replacement when enough survive, otherwise every
/// survivor plus uniformly drawn duplicates.
pub fn sample_points<A: Clone>(sample: &Sample<A>, target_points: usize, range_m: f64, rng: &mut impl Rng) -> Result<Sample<A>> {
    let survivors: Vec<usize> = (0..sample.len()).filter(|&i| norm(&sample.points[i]) <= range_m).collect();
    if survivors.is_empty() {
        return Err(Error::DegenerateFrame { range_m });
    }
    let idx: Vec<usize> = if survivors.len() >= target_points {
        index::sample(rng, survivors.len(), target_points).into_iter().map(|i| survivors[i]).collect()
    } else {
        let mut idx = survivors.clone();
        for _ in survivors.len()..target_points {
            idx.push(survivors[rng.gen_range(0..survivors.len())]);
        }
        idx
    };
    Ok(sample.select(&idx))
}

pub fn shuffle_points<A: Clone>(sample: &Sample<A>, rng: &mut impl Rng) -> Sample<A> {
    let mut idx: Vec<usize> = (0..sample.len()).collect();
    idx.shuffle(rng);
    sample.select(&idx)
}

/// Applies flip, rotate, scale, sample and shuffle in that order.
///
/// Each step draws from its own stream keyed by `(rng_seed, frame_key, op)`,
/// so frames can be augmented in any order or in parallel.
pub fn compose<A: Clone>(sample: &Sample<A>, config: &AugmentConfig, rng_seed: u64, frame_key: u64) -> Result<Sample<A>> {
    config.validate()?;
    let draw = |tag: u64| rng::stream(&[rng_seed, frame_key, tag]);

    let flip_draw = rng::unit(&mut draw(op::FLIP));
    let angle = rng::uniform(&mut draw(op::ROTATE), -config.rot_range, config.rot_range);
    let (lo, hi) = config.scale_range;
    let scale = rng::uniform(&mut draw(op::SCALE), lo, hi);

    let out = random_flip(sample.clone(), flip_draw, config.flip_prob);
    let out = random_rotate(out, angle);
    let out = random_scale(out, scale);
    let out = sample_points(&out, config.target_points, config.range_m, &mut draw(op::SAMPLE))?;
    if config.shuffle {
        Ok(shuffle_points(&out, &mut draw(op::SHUFFLE)))
    } else {
        Ok(out)
    }
}
