//! ASCII PLY output for colorized clouds.

use std::fmt::Write;

use gpc_core::geometry::{Rgb, Vec3};

/// One vertex per point with `x y z red green blue label`; labels are
/// written 1-based.
pub fn render_ply(points: &[Vec3], colors: &[Rgb], labels: &[usize]) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", points.len());
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    out.push_str("property int label\nend_header\n");
    for ((p, c), l) in points.iter().zip(colors).zip(labels) {
        let [r, g, b] = c.map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8);
        let _ = writeln!(out, "{} {} {} {r} {g} {b} {}", p[0] as f32, p[1] as f32, p[2] as f32, l + 1);
    }
    out
}
