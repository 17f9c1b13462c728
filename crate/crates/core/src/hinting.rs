//! Seed selection and one-hot hint encoding.
//!
//! A seed point reveals its color class to the decoder as a one-hot vector.
//! Every other point gets an all-zero hint row.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use crate::geometry::Vec3;
use crate::math::{round, sqrt};
use crate::matrix::Matrix;
use crate::{Error, Result};

/// How seed points are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SeedStrategy {
    /// Uniformly at random over all points.
    #[default]
    Uniform,
    /// Per-class quotas proportional to the square root of the class size.
    Balanced,
}

/// A labeled cloud split into seed and unknown points, with its hint rows.
#[derive(Debug, Clone, PartialEq)]
pub struct HintedSample {
    pub points: Vec<Vec3>,
    pub labels: Vec<usize>,
    pub seed_mask: Vec<bool>,
    /// `N x K`, one-hot on seed rows and zero elsewhere.
    pub hints: Matrix,
}

impl HintedSample {
    pub fn new(points: Vec<Vec3>, labels: Vec<usize>, seed_mask: Vec<bool>, classes: usize) -> Result<Self> {
        if points.len() != labels.len() || labels.len() != seed_mask.len() {
            return Err(Error::shape("points, labels and seed mask differ in length"));
        }
        let hints = encode_hints(&labels, &seed_mask, classes)?;
        Ok(HintedSample { points, labels, seed_mask, hints })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.hints.cols()
    }

    pub fn seed_count(&self) -> usize {
        self.seed_mask.iter().filter(|&&s| s).count()
    }
}

/// Number of seeds for `n` points: `round(seed_ratio * n)`, halves away from zero.
pub fn seed_budget(n: usize, seed_ratio: f64) -> usize {
    (round(seed_ratio * n as f64) as usize).min(n)
}

fn check_ratio(seed_ratio: f64) -> Result<()> {
    if (0.0..=1.0).contains(&seed_ratio) {
        Ok(())
    } else {
        Err(Error::invalid("seed_ratio must lie in [0, 1]"))
    }
}

/// Exactly `seed_budget(n, seed_ratio)` seeds, uniformly without replacement.
pub fn make_hints_uniform(n: usize, seed_ratio: f64, rng: &mut impl Rng) -> Result<Vec<bool>> {
    check_ratio(seed_ratio)?;
    let mut mask = vec![false; n];
    for i in index::sample(rng, n, seed_budget(n, seed_ratio)) {
        mask[i] = true;
    }
    Ok(mask)
}

/// Splits `total` across classes in proportion to `weights` by largest
/// remainder, never giving a class more than `caps[c]`. Surplus from capped
/// classes is redistributed over the rest.
pub fn balanced_quotas(weights: &[f64], caps: &[usize], total: usize) -> Vec<usize> {
    let k = weights.len();
    let mut quota = vec![0usize; k];
    let mut open: Vec<usize> = (0..k).filter(|&c| caps[c] > 0 && weights[c] > 0.0).collect();
    let mut remaining = total.min(caps.iter().sum());
    while remaining > 0 && !open.is_empty() {
        let wsum: f64 = open.iter().map(|&c| weights[c]).sum();
        let mut share: Vec<(usize, usize, f64)> = open
            .iter()
            .map(|&c| {
                let exact = remaining as f64 * weights[c] / wsum;
                let base = exact as usize;
                (c, base, exact - base as f64)
            })
            .collect();
        let mut left = remaining - share.iter().map(|s| s.1).sum::<usize>();
        let mut order: Vec<usize> = (0..share.len()).collect();
        order.sort_by(|&a, &b| share[b].2.total_cmp(&share[a].2).then(share[a].0.cmp(&share[b].0)));
        for &i in &order {
            if left == 0 {
                break;
            }
            share[i].1 += 1;
            left -= 1;
        }
        let mut overflow = false;
        for &(c, want, _) in &share {
            if quota[c] + want >= caps[c] {
                overflow |= quota[c] + want > caps[c];
                remaining -= caps[c] - quota[c];
                quota[c] = caps[c];
            }
        }
        if !overflow {
            for &(c, want, _) in &share {
                if quota[c] < caps[c] {
                    quota[c] += want;
                    remaining -= want;
                }
            }
            debug_assert_eq!(remaining, 0);
        }
        open.retain(|&c| quota[c] < caps[c]);
    }
    quota
}

/// Seeds allocated per class in proportion to `sqrt(class size)`, then drawn
/// uniformly within each class.
pub fn make_hints_balanced(labels: &[usize], classes: usize, seed_ratio: f64, rng: &mut impl Rng) -> Result<Vec<bool>> {
    check_ratio(seed_ratio)?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
        members[l].push(i);
    }
    let caps: Vec<usize> = members.iter().map(Vec::len).collect();
    let weights: Vec<f64> = caps.iter().map(|&n| sqrt(n as f64)).collect();
    let quotas = balanced_quotas(&weights, &caps, seed_budget(labels.len(), seed_ratio));
    let mut mask = vec![false; labels.len()];
    for (class_members, &q) in members.iter().zip(&quotas) {
        for j in index::sample(rng, class_members.len(), q) {
            mask[class_members[j]] = true;
        }
    }
    Ok(mask)
}

/// `N x K` hint rows: one-hot at the label for seeds, zero otherwise.
pub fn encode_hints(labels: &[usize], seed_mask: &[bool], classes: usize) -> Result<Matrix> {
    if labels.len() != seed_mask.len() {
        return Err(Error::shape("labels and seed mask differ in length"));
    }
    let mut hints = Matrix::zeros(labels.len(), classes);
    for (i, (&l, &seed)) in labels.iter().zip(seed_mask).enumerate() {
        if l >= classes {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
        if seed {
            hints.set(i, l, 1.0);
        }
    }
    Ok(hints)
}
