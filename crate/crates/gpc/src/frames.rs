//! Colored-frame files and the dataset manifest.
//!
//! Frame layout: `GPCFRM`, version byte, u32 point count, intensity flag
//! byte, then per point `x y z` f32, optional intensity f32, `r g b` bytes.
//! The manifest is `frame_id<TAB>points`, one line per frame.

use std::path::Path;

use gpc_core::{ColoredPointCloud, PointCloud};

use crate::binio::{put_u32, Reader};
use crate::error::{Error, Result};
use crate::fsio;

pub const MAGIC: &[u8] = b"GPCFRM";
pub const VERSION: u8 = 1;
pub const EXTENSION: &str = "gpcf";
pub const MANIFEST: &str = "manifest.tsv";

fn to_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn encode_frame(frame: &ColoredPointCloud) -> Result<Vec<u8>> {
    let cloud = &frame.cloud;
    let mut out = MAGIC.to_vec();
    out.push(VERSION);
    put_u32(&mut out, cloud.len())?;
    out.push(u8::from(cloud.intensity.is_some()));
    for (i, (p, c)) in cloud.points.iter().zip(&frame.colors).enumerate() {
        for v in p {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        if let Some(w) = &cloud.intensity {
            out.extend_from_slice(&(w[i] as f32).to_le_bytes());
        }
        out.extend(c.iter().map(|&v| to_byte(v)));
    }
    Ok(out)
}

pub fn decode_frame(bytes: &[u8]) -> Result<ColoredPointCloud> {
    let mut r = Reader::new(bytes, "frame file");
    r.header(MAGIC, VERSION)?;
    let n = r.len_u32()?;
    let with_intensity = match r.u8()? {
        0 => false,
        1 => true,
        f => return Err(Error::format(format!("frame file has bad intensity flag {f}"))),
    };
    let mut points = Vec::with_capacity(n.min(1 << 24));
    let mut intensity = Vec::new();
    let mut colors = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        points.push([r.f32()? as f64, r.f32()? as f64, r.f32()? as f64]);
        if with_intensity {
            intensity.push(r.f32()? as f64);
        }
        let c = r.take(3)?;
        colors.push(gpc_core::geometry::byte_to_rgb([c[0], c[1], c[2]]));
    }
    r.finish()?;
    let cloud = if with_intensity { PointCloud::with_intensity(points, intensity)? } else { PointCloud::new(points)? };
    Ok(ColoredPointCloud::new(cloud, colors)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub points: usize,
}

pub fn render_manifest(entries: &[ManifestEntry]) -> String {
    entries.iter().map(|e| format!("{}\t{}\n", e.id, e.points)).collect()
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let (id, n) = l.split_once('\t').ok_or_else(|| Error::format(format!("manifest line {}: expected id<TAB>points", i + 1)))?;
            let points = n.trim().parse().map_err(|_| Error::format(format!("manifest line {}: bad point count", i + 1)))?;
            Ok(ManifestEntry { id: id.to_string(), points })
        })
        .collect()
}

pub fn frame_path(dir: &Path, id: &str) -> std::path::PathBuf {
    dir.join(format!("{id}.{EXTENSION}"))
}

/// Loads every frame listed in `dir/manifest.tsv`, in manifest order.
pub fn load_dataset(dir: &Path) -> Result<(Vec<String>, Vec<ColoredPointCloud>)> {
    let manifest = parse_manifest(&fsio::read_text(&dir.join(MANIFEST))?)?;
    if manifest.is_empty() {
        return Err(Error::format(format!("{}: manifest lists no frames", dir.display())));
    }
    let mut ids = Vec::new();
    let mut frames = Vec::new();
    for e in manifest {
        let path = frame_path(dir, &e.id);
        let frame = decode_frame(&fsio::read(&path)?).map_err(|err| Error::format(format!("{}: {err}", path.display())))?;
        if frame.len() != e.points {
            return Err(Error::format(format!("{}: {} points, manifest says {}", path.display(), frame.len(), e.points)));
        }
        ids.push(e.id);
        frames.push(frame);
    }
    Ok((ids, frames))
}

/// Per-point `(label, instance)` little-endian u16 pairs.
pub fn encode_labels(labels: &[usize], instances: &[u16]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(labels.len() * 4);
    for (&l, &i) in labels.iter().zip(instances) {
        let l = u16::try_from(l).map_err(|_| Error::format(format!("label {l} does not fit in 16 bits")))?;
        out.extend_from_slice(&l.to_le_bytes());
        out.extend_from_slice(&i.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_labels(bytes: &[u8]) -> Result<Vec<(u16, u16)>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::format("label file length is not a multiple of 4"));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| (u16::from_le_bytes([c[0], c[1]]), u16::from_le_bytes([c[2], c[3]])))
        .collect())
}
