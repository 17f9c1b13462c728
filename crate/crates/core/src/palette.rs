//! K-means color quantization.
//!
//! Pixels are clustered with Lloyd's algorithm seeded by k-means++. The fitted
//! centroids become a [`ColorPalette`], which turns any RGB color into a class
//! label (the index of its nearest centroid).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use crate::geometry::{byte_to_rgb, ImageBuffer, Rgb};
use crate::math::{sqrt, squared_distance};
use crate::rng::{self, op};
use crate::{Error, Result};

/// Quantized color centroids. Label `j` stands for `centroids[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorPalette {
    centroids: Vec<[f32; 3]>,
}

impl ColorPalette {
    pub fn new(centroids: Vec<[f32; 3]>) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::invalid("palette needs at least one centroid"));
        }
        if centroids.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::invalid("palette channel outside [0, 1]"));
        }
        for i in 0..centroids.len() {
            for j in 0..i {
                if centroids[i] == centroids[j] {
                    return Err(Error::invalid(format!("centroids {j} and {i} coincide")));
                }
            }
        }
        Ok(ColorPalette { centroids })
    }

    /// Builds a palette from `[0, 1]` colors, rounding each channel to `f32`.
    pub fn from_rgb(colors: &[Rgb]) -> Result<Self> {
        Self::new(colors.iter().map(|c| [c[0] as f32, c[1] as f32, c[2] as f32]).collect())
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn centroids(&self) -> &[[f32; 3]] {
        &self.centroids
    }

    pub fn centroid(&self, label: usize) -> Rgb {
        let c = self.centroids[label];
        [c[0] as f64, c[1] as f64, c[2] as f64]
    }

    /// Nearest centroid by squared Euclidean distance, ties to the lowest index.
    pub fn label_of(&self, color: &Rgb) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for j in 0..self.k() {
            let d = squared_distance(color, &self.centroid(j));
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        best
    }
}

/// Draws `pixels_per_image` pixels uniformly with replacement from every image.
pub fn sample_training_pixels(images: &[ImageBuffer], pixels_per_image: usize, rng_seed: u64) -> Result<Vec<Rgb>> {
    if images.is_empty() {
        return Err(Error::invalid("no images to sample pixels from"));
    }
    if pixels_per_image == 0 {
        return Err(Error::invalid("pixels_per_image must be at least 1"));
    }
    let mut out = Vec::with_capacity(images.len() * pixels_per_image);
    for (i, image) in images.iter().enumerate() {
        out.extend(sample_image_pixels(image, pixels_per_image, rng_seed, i as u64));
    }
    Ok(out)
}

/// The pixels [`sample_training_pixels`] draws from the image at position
/// `image_key`, for callers that stream images one at a time.
pub fn sample_image_pixels(image: &ImageBuffer, pixels_per_image: usize, rng_seed: u64, image_key: u64) -> Vec<Rgb> {
    let mut rng = rng::stream(&[rng_seed, image_key, op::PIXELS]);
    let n = image.pixels().len();
    (0..pixels_per_image).map(|_| byte_to_rgb(image.pixels()[rng.gen_range(0..n)])).collect()
}

/// Picks `count` of `available` images uniformly without replacement, in
/// ascending index order. Takes all of them when `count >= available`.
pub fn select_images(available: usize, count: usize, rng_seed: u64) -> Vec<usize> {
    if count >= available {
        return (0..available).collect();
    }
    let mut rng = rng::stream(&[rng_seed, op::PIXELS]);
    let mut idx = index::sample(&mut rng, available, count).into_vec();
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub k: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub rng_seed: u64,
}

impl KMeansOptions {
    pub fn new(k: usize) -> Self {
        KMeansOptions { k, max_iters: 100, tol: 1e-4, rng_seed: 0 }
    }
}

/// Result of a Lloyd run.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Rgb>,
    /// Inertia after every assignment step, ending with the final centroids.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansFit {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().unwrap_or(&0.0)
    }

    pub fn palette(&self) -> Result<ColorPalette> {
        ColorPalette::from_rgb(&self.centroids)
    }
}

fn assign(pixels: &[Rgb], centroids: &[Rgb], labels: &mut [usize], dists: &mut [f64]) -> f64 {
    let mut inertia = 0.0;
    for (i, p) in pixels.iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, c) in centroids.iter().enumerate() {
            let d = squared_distance(p, c);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        labels[i] = best;
        dists[i] = best_d;
        inertia += best_d;
    }
    inertia
}

fn kmeans_plus_plus(pixels: &[Rgb], k: usize, rng: &mut impl Rng) -> Result<Vec<Rgb>> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(pixels[rng.gen_range(0..pixels.len())]);
    let mut d2: Vec<f64> = pixels.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid(format!(
                "fewer than {k} distinct colors among {} pixels",
                pixels.len()
            )));
        }
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 {
                acc += d;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
        }
        let c = pixels[pick.expect("positive total implies a candidate")];
        for (p, d) in pixels.iter().zip(d2.iter_mut()) {
            *d = d.min(squared_distance(p, &c));
        }
        centroids.push(c);
    }
    Ok(centroids)
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Stops after `max_iters` updates or once no centroid moves by `tol` or
/// more. An emptied cluster is re-seeded at the pixel currently farthest from
/// its centroid, which can only lower the inertia.
pub fn fit_kmeans(pixels: &[Rgb], opts: &KMeansOptions) -> Result<KMeansFit> {
    let k = opts.k;
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if pixels.len() < k {
        return Err(Error::InsufficientData { needed: k, got: pixels.len() });
    }
    if pixels.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("pixel color".into()));
    }
    let mut rng = rng::stream(&[opts.rng_seed, op::KMEANS]);
    let mut centroids = kmeans_plus_plus(pixels, k, &mut rng)?;
    let mut labels = vec![0usize; pixels.len()];
    let mut dists = vec![0.0; pixels.len()];
    let mut history = Vec::new();
    let mut iterations = 0;

    while iterations < opts.max_iters {
        history.push(assign(pixels, &centroids, &mut labels, &mut dists));
        iterations += 1;

        let mut sums = vec![[0.0f64; 3]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in pixels.iter().zip(&labels) {
            for ch in 0..3 {
                sums[l][ch] += p[ch];
            }
            counts[l] += 1;
        }
        let mut shift = 0.0f64;
        let mut empty = Vec::new();
        for j in 0..k {
            if counts[j] == 0 {
                empty.push(j);
                continue;
            }
            let n = counts[j] as f64;
            let next = [sums[j][0] / n, sums[j][1] / n, sums[j][2] / n];
            shift = shift.max(sqrt(squared_distance(&next, &centroids[j])));
            centroids[j] = next;
        }
        for j in empty {
            // Distances to the (just moved) assigned centroids.
            for (i, p) in pixels.iter().enumerate() {
                dists[i] = squared_distance(p, &centroids[labels[i]]);
            }
            let far = (0..pixels.len())
                .fold(0, |best, i| if dists[i] > dists[best] { i } else { best });
            shift = shift.max(sqrt(squared_distance(&pixels[far], &centroids[j])));
            centroids[j] = pixels[far];
            labels[far] = j;
        }
        if shift < opts.tol {
            break;
        }
    }
    history.push(assign(pixels, &centroids, &mut labels, &mut dists));
    Ok(KMeansFit { centroids, inertia_history: history, iterations })
}

/// Label of each color under `palette`.
pub fn assign_labels(palette: &ColorPalette, colors: &[Rgb]) -> Vec<usize> {
    colors.iter().map(|c| palette.label_of(c)).collect()
}

/// Centroid color of each label.
pub fn reconstruct_colors(palette: &ColorPalette, labels: &[usize]) -> Result<Vec<Rgb>> {
    labels
        .iter()
        .map(|&l| {
            if l < palette.k() {
                Ok(palette.centroid(l))
            } else {
                Err(Error::LabelOutOfRange { label: l, classes: palette.k() })
            }
        })
        .collect()
}

/// Mean absolute per-channel error after quantizing `colors` with `palette`.
pub fn reconstruction_error(palette: &ColorPalette, colors: &[Rgb]) -> f64 {
    if colors.is_empty() {
        return 0.0;
    }
    let total: f64 = colors
        .iter()
        .map(|c| {
            let q = palette.centroid(palette.label_of(c));
            (0..3).map(|ch| (c[ch] - q[ch]).abs()).sum::<f64>()
        })
        .sum();
    total / (3 * colors.len()) as f64
}
