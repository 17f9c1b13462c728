//! Palette file: `GPCPAL`, version byte, `K` as u32, then `K x 3` f32.

use std::path::Path;

use gpc_core::ColorPalette;

use crate::binio::{put_u32, Reader};
use crate::error::Result;
use crate::fsio;

pub const MAGIC: &[u8] = b"GPCPAL";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 6 + 1 + 4;

pub fn encode_palette(palette: &ColorPalette) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + palette.k() * 12);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    put_u32(&mut out, palette.k())?;
    for c in palette.centroids() {
        for v in c {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_palette(bytes: &[u8]) -> Result<ColorPalette> {
    let mut r = Reader::new(bytes, "palette file");
    r.header(MAGIC, VERSION)?;
    let k = r.len_u32()?;
    let mut centroids = Vec::with_capacity(k.min(1 << 16));
    for _ in 0..k {
        centroids.push([r.f32()?, r.f32()?, r.f32()?]);
    }
    r.finish()?;
    Ok(ColorPalette::new(centroids)?)
}

pub fn save_palette(path: &Path, palette: &ColorPalette) -> Result<()> {
    fsio::write_atomic(path, &encode_palette(palette)?)
}

pub fn load_palette(path: &Path) -> Result<ColorPalette> {
    decode_palette(&fsio::read(path)?)
}
