//! Point clouds, KITTI-style calibration, and LiDAR-to-camera projection.

use alloc::format;
use alloc::vec::Vec;

use crate::math::round_half_up;
use crate::{Error, Result};

pub type Vec3 = [f64; 3];

/// RGB color with channels in `[0, 1]`.
pub type Rgb = [f64; 3];

/// Ordered 3-D points in the LiDAR/ego frame, in meters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    /// Return intensity per point, when the source format carries it.
    pub intensity: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(format!("point {i}")));
        }
        Ok(PointCloud { points, intensity: None })
    }

    pub fn with_intensity(points: Vec<Vec3>, intensity: Vec<f64>) -> Result<Self> {
        if points.len() != intensity.len() {
            return Err(Error::shape(format!(
                "{} points but {} intensities",
                points.len(),
                intensity.len()
            )));
        }
        let mut cloud = PointCloud::new(points)?;
        cloud.intensity = Some(intensity);
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Camera calibration in the KITTI layout.
///
/// Points map to the image as `P2 * R0_rect * Tr_velo_to_cam * [x y z 1]^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub p2: [[f64; 4]; 3],
    pub r0_rect: [[f64; 3]; 3],
    pub tr_velo_to_cam: [[f64; 4]; 3],
}

impl Calibration {
    /// Tolerance on `R0_rect^T R0_rect = I`.
    pub const ORTHONORMAL_TOL: f64 = 1e-3;

    pub fn new(p2: [[f64; 4]; 3], r0_rect: [[f64; 3]; 3], tr_velo_to_cam: [[f64; 4]; 3]) -> Result<Self> {
        let finite = p2.iter().flatten().all(|v| v.is_finite())
            && r0_rect.iter().flatten().all(|v| v.is_finite())
            && tr_velo_to_cam.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("calibration matrix".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r0_rect[k][i] * r0_rect[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > Self::ORTHONORMAL_TOL {
                    return Err(Error::invalid("R0_rect is not orthonormal"));
                }
            }
        }
        Ok(Calibration { p2, r0_rect, tr_velo_to_cam })
    }

    /// Rectified camera-frame coordinates of a LiDAR point.
    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        let t = &self.tr_velo_to_cam;
        let mut cam = [0.0; 3];
        for (r, out) in cam.iter_mut().enumerate() {
            *out = t[r][0] * p[0] + t[r][1] * p[1] + t[r][2] * p[2] + t[r][3];
        }
        let r0 = &self.r0_rect;
        let mut rect = [0.0; 3];
        for (r, out) in rect.iter_mut().enumerate() {
            *out = r0[r][0] * cam[0] + r0[r][1] * cam[1] + r0[r][2] * cam[2];
        }
        rect
    }

    /// Continuous image coordinates `(u, v)` and projective depth, before any
    /// visibility test.
    pub fn project(&self, p: &Vec3) -> (f64, f64, f64) {
        let c = self.to_camera(p);
        let m = &self.p2;
        let h = |r: usize| m[r][0] * c[0] + m[r][1] * c[1] + m[r][2] * c[2] + m[r][3];
        let depth = h(2);
        (h(0) / depth, h(1) / depth, depth)
    }
}

/// RGB image, row-major, one byte per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::shape(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(ImageBuffer { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    /// Pixel at column `u`, row `v`.
    pub fn pixel(&self, u: usize, v: usize) -> [u8; 3] {
        self.pixels[v * self.width + u]
    }
}

/// Converts a byte pixel to `[0, 1]` channels.
#[inline]
pub fn byte_to_rgb(px: [u8; 3]) -> Rgb {
    [px[0] as f64 / 255.0, px[1] as f64 / 255.0, px[2] as f64 / 255.0]
}

/// A point cloud with one color per point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ColoredPointCloud {
    pub cloud: PointCloud,
    pub colors: Vec<Rgb>,
}

impl ColoredPointCloud {
    pub fn new(cloud: PointCloud, colors: Vec<Rgb>) -> Result<Self> {
        if cloud.len() != colors.len() {
            return Err(Error::shape(format!(
                "{} points but {} colors",
                cloud.len(),
                colors.len()
            )));
        }
        if colors.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::invalid("color channel outside [0, 1]"));
        }
        Ok(ColoredPointCloud { cloud, colors })
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.cloud.points
    }
}

/// Pixel `(u, v)` hit by each point, or `None` when the point is behind the
/// camera or lands outside a `width x height` image.
pub fn project_points(cloud: &PointCloud, calib: &Calibration, width: usize, height: usize) -> Vec<Option<(usize, usize)>> {
    cloud.points.iter().map(|p| project_to_pixel(calib, p, width, height)).collect()
}

fn project_to_pixel(calib: &Calibration, p: &Vec3, width: usize, height: usize) -> Option<(usize, usize)> {
    let (u, v, depth) = calib.project(p);
    if !(depth > 0.0) {
        return None;
    }
    let u = round_half_up(u);
    let v = round_half_up(v);
    if u >= 0.0 && v >= 0.0 && u < width as f64 && v < height as f64 {
        Some((u as usize, v as usize))
    } else {
        None
    }
}

/// Keeps the points visible in `image` and attaches the nearest pixel's color.
pub fn harvest_colors(cloud: &PointCloud, image: &ImageBuffer, calib: &Calibration) -> ColoredPointCloud {
    let mut points = Vec::new();
    let mut intensity = cloud.intensity.as_ref().map(|_| Vec::new());
    let mut colors = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        if let Some((u, v)) = project_to_pixel(calib, p, image.width(), image.height()) {
            points.push(*p);
            if let (Some(out), Some(src)) = (intensity.as_mut(), cloud.intensity.as_ref()) {
                out.push(src[i]);
            }
            colors.push(byte_to_rgb(image.pixel(u, v)));
        }
    }
    ColoredPointCloud { cloud: PointCloud { points, intensity }, colors }
}
