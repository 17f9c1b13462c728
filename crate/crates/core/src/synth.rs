//! Procedural colored scenes: a gray ground plane with axis-aligned boxes.
//!
//! In `Fixed` mode a box's color follows from its size category, so colors
//! are a function of geometry. In `Variant` mode each box draws its color
//! uniformly from the object colors, independently of its shape, which makes
//! the best achievable hint-free accuracy on box points `1 / object_colors`.

use alloc::vec::Vec;

use rand::Rng;

use crate::geometry::{byte_to_rgb, ColoredPointCloud, PointCloud, Rgb, Vec3};
use crate::palette::ColorPalette;
use crate::rng::{self, op};
use crate::{Error, Result};

/// Label of the ground color in [`synth_palette`].
pub const GROUND_LABEL: usize = 0;

const GROUND_COLOR: [u8; 3] = [128, 128, 128];
const OBJECT_COLORS: [[u8; 3]; 16] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [170, 110, 40],
    [128, 0, 0],
    [0, 0, 128],
    [255, 255, 255],
    [0, 0, 0],
];

/// Largest supported palette.
pub const MAX_PALETTE: usize = OBJECT_COLORS.len() + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColorMode {
    /// Box color determined by box size category.
    #[default]
    Fixed,
    /// Box color drawn independently of geometry.
    Variant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub n_boxes: usize,
    pub points_per_box: usize,
    pub ground_points: usize,
    /// Total palette size, ground color included.
    pub palette_size: usize,
    /// Colors available to boxes: labels `1..=object_colors`.
    pub object_colors: usize,
    pub color_mode: ColorMode,
    pub noise_sigma: f64,
    /// Half-width of the square ground patch, meters.
    pub extent_m: f64,
    /// Seeds geometry and noise.
    pub rng_seed: u64,
    /// Seeds box colors in variant mode.
    pub color_seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            n_boxes: 4,
            points_per_box: 80,
            ground_points: 400,
            palette_size: 8,
            object_colors: 4,
            color_mode: ColorMode::Fixed,
            noise_sigma: 0.01,
            extent_m: 15.0,
            rng_seed: 0,
            color_seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_PALETTE).contains(&self.palette_size) {
            return Err(Error::invalid(alloc::format!("palette_size must lie in 2..={MAX_PALETTE}")));
        }
        if self.object_colors == 0 || self.object_colors >= self.palette_size {
            return Err(Error::invalid("object_colors must lie in 1..palette_size"));
        }
        if !(self.noise_sigma >= 0.0 && self.extent_m > 0.0) {
            return Err(Error::invalid("noise_sigma must be non-negative and extent_m positive"));
        }
        Ok(())
    }

    pub fn total_points(&self) -> usize {
        self.ground_points + self.n_boxes * self.points_per_box
    }

    pub fn box_fraction(&self) -> f64 {
        let total = self.total_points();
        if total == 0 {
            0.0
        } else {
            (self.n_boxes * self.points_per_box) as f64 / total as f64
        }
    }
}

/// Ground gray followed by saturated object colors, all exact byte values.
pub fn synth_palette(size: usize) -> Result<ColorPalette> {
    if !(1..=MAX_PALETTE).contains(&size) {
        return Err(Error::invalid(alloc::format!("palette size must lie in 1..={MAX_PALETTE}")));
    }
    let colors: Vec<Rgb> = core::iter::once(GROUND_COLOR).chain(OBJECT_COLORS).take(size).map(byte_to_rgb).collect();
    ColorPalette::from_rgb(&colors)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: ColoredPointCloud,
    pub labels: Vec<usize>,
    /// 0 for ground, `1..=n_boxes` for boxes.
    pub instance_ids: Vec<u16>,
}

#[derive(Debug, Clone, Copy)]
struct Placed {
    center: [f64; 2],
    half: [f64; 2],
    height: f64,
    category: usize,
}

fn category_dims(category: usize) -> ([f64; 2], f64) {
    let c = category as f64;
    ([1.0 + 0.5 * c, 0.6 + 0.15 * c], 0.8 + 0.5 * c)
}

fn place_boxes(spec: &SceneSpec, rng: &mut impl Rng) -> Result<Vec<Placed>> {
    const ATTEMPTS: usize = 1000;
    const GAP: f64 = 1.0;
    let mut boxes: Vec<Placed> = Vec::with_capacity(spec.n_boxes);
    for _ in 0..spec.n_boxes {
        let category = rng.gen_range(0..spec.object_colors);
        let (half, height) = category_dims(category);
        let mut placed = false;
        for _ in 0..ATTEMPTS {
            let lim_x = spec.extent_m - half[0];
            let lim_y = spec.extent_m - half[1];
            if lim_x <= 0.0 || lim_y <= 0.0 {
                break;
            }
            let center = [rng::uniform(rng, -lim_x, lim_x), rng::uniform(rng, -lim_y, lim_y)];
            let clear = boxes.iter().all(|b| {
                (center[0] - b.center[0]).abs() >= half[0] + b.half[0] + GAP
                    || (center[1] - b.center[1]).abs() >= half[1] + b.half[1] + GAP
            });
            if clear {
                boxes.push(Placed { center, half, height, category });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Placement { boxes: spec.n_boxes, attempts: ATTEMPTS });
        }
    }
    Ok(boxes)
}

fn surface_point(b: &Placed, rng: &mut impl Rng) -> Vec3 {
    let [hx, hy] = b.half;
    let h = b.height;
    // Four sides and the top, weighted by area.
    let areas = [2.0 * hy * h, 2.0 * hy * h, 2.0 * hx * h, 2.0 * hx * h, 4.0 * hx * hy];
    let total: f64 = areas.iter().sum();
    let mut pick = rng::unit(rng) * total;
    let mut face = 4;
    for (i, a) in areas.iter().enumerate() {
        if pick < *a {
            face = i;
            break;
        }
        pick -= a;
    }
    let u = rng::uniform(rng, -1.0, 1.0);
    let z = rng::uniform(rng, 0.0, h);
    let (x, y, z) = match face {
        0 => (hx, u * hy, z),
        1 => (-hx, u * hy, z),
        2 => (u * hx, hy, z),
        3 => (u * hx, -hy, z),
        _ => (u * hx, rng::uniform(rng, -hy, hy), h),
    };
    [b.center[0] + x, b.center[1] + y, z]
}

/// Generates one scene. Ground points come first, then each box's points.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let palette = synth_palette(spec.palette_size)?;
    let mut geo = rng::stream(&[spec.rng_seed, op::GEOMETRY]);
    let mut colors_rng = rng::stream(&[spec.color_seed, op::COLORS]);
    let mut noise = rng::stream(&[spec.rng_seed, op::NOISE]);

    let boxes = place_boxes(spec, &mut geo)?;
    let mut points = Vec::with_capacity(spec.total_points());
    let mut labels = Vec::with_capacity(spec.total_points());
    let mut instance_ids = Vec::with_capacity(spec.total_points());

    let e = spec.extent_m;
    let mut ground = 0;
    let mut tries = 0usize;
    while ground < spec.ground_points {
        tries += 1;
        if tries > 1000 * (spec.ground_points + 1) {
            return Err(Error::invalid("boxes cover too much of the ground patch"));
        }
        let p = [rng::uniform(&mut geo, -e, e), rng::uniform(&mut geo, -e, e), 0.0];
        let covered = boxes
            .iter()
            .any(|b| (p[0] - b.center[0]).abs() <= b.half[0] && (p[1] - b.center[1]).abs() <= b.half[1]);
        if !covered {
            points.push(p);
            labels.push(GROUND_LABEL);
            instance_ids.push(0);
            ground += 1;
        }
    }
    for (i, b) in boxes.iter().enumerate() {
        let label = match spec.color_mode {
            ColorMode::Fixed => 1 + b.category,
            ColorMode::Variant => 1 + colors_rng.gen_range(0..spec.object_colors),
        };
        for _ in 0..spec.points_per_box {
            points.push(surface_point(b, &mut geo));
            labels.push(label);
            instance_ids.push((i + 1) as u16);
        }
    }
    if spec.noise_sigma > 0.0 {
        for p in &mut points {
            for c in p.iter_mut() {
                *c += spec.noise_sigma * rng::gaussian(&mut noise);
            }
        }
    }
    let colors = labels.iter().map(|&l| palette.centroid(l)).collect();
    let cloud = ColoredPointCloud::new(PointCloud::new(points)?, colors)?;
    Ok(Scene { cloud, labels, instance_ids })
}

/// Best expected hint-free label accuracy over a scene: ground points are
/// always predictable, variant-mode box points only at chance among the
/// object colors.
pub fn bayes_accuracy(spec: &SceneSpec) -> f64 {
    let total = spec.total_points();
    if total == 0 || spec.color_mode == ColorMode::Fixed {
        return 1.0;
    }
    let boxes = (spec.n_boxes * spec.points_per_box) as f64;
    (spec.ground_points as f64 + boxes / spec.object_colors as f64) / total as f64
}
