//! KITTI raw formats: velodyne point records, calibration text, binary PPM.

use gpc_core::{Calibration, ImageBuffer, PointCloud};

use crate::error::{Error, Result};

const RECORD: usize = 16;

/// Decodes `x y z intensity` little-endian f32 records.
pub fn parse_point_bin(bytes: &[u8]) -> Result<PointCloud> {
    if !bytes.len().is_multiple_of(RECORD) {
        return Err(Error::format(format!("point file length {} is not a multiple of {RECORD}", bytes.len())));
    }
    let n = bytes.len() / RECORD;
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(RECORD).enumerate() {
        let f: Vec<f32> = rec.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(format!("point record {i} holds a non-finite value")));
        }
        points.push([f[0] as f64, f[1] as f64, f[2] as f64]);
        intensity.push(f[3] as f64);
    }
    Ok(PointCloud::with_intensity(points, intensity)?)
}

/// Inverse of [`parse_point_bin`]; missing intensity is written as zero.
pub fn encode_point_bin(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * RECORD);
    for (i, p) in cloud.points.iter().enumerate() {
        let w = cloud.intensity.as_ref().map_or(0.0, |v| v[i]);
        for v in [p[0], p[1], p[2], w] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn values<const N: usize>(text: &str, key: &str) -> Result<[f64; N]> {
    let line = text
        .lines()
        .find_map(|l| l.trim().strip_prefix(key).and_then(|rest| rest.strip_prefix(':')))
        .ok_or_else(|| Error::format(format!("calibration is missing {key}")))?;
    let parsed: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
    let parsed = parsed.map_err(|_| Error::format(format!("calibration {key} holds a non-numeric value")))?;
    parsed
        .try_into()
        .map_err(|v: Vec<f64>| Error::format(format!("calibration {key} has {} values, expected {N}", v.len())))
}

fn rows<const R: usize, const C: usize>(flat: &[f64]) -> [[f64; C]; R] {
    let mut m = [[0.0; C]; R];
    for (r, row) in m.iter_mut().enumerate() {
        row.copy_from_slice(&flat[r * C..(r + 1) * C]);
    }
    m
}

/// Reads `P2`, `R0_rect` and `Tr_velo_to_cam`; other keys are ignored.
pub fn parse_calib(text: &str) -> Result<Calibration> {
    let p2: [f64; 12] = values(text, "P2")?;
    let r0: [f64; 9] = values(text, "R0_rect")?;
    let tr: [f64; 12] = values(text, "Tr_velo_to_cam")?;
    Ok(Calibration::new(rows(&p2), rows(&r0), rows(&tr))?)
}

/// Skips whitespace and `#` comments, then reads one header token.
fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::format("truncated PPM header")),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(format!("PPM {what} is not a number")))
}

/// Binary `P6` with maxval 255.
pub fn parse_ppm(bytes: &[u8]) -> Result<ImageBuffer> {
    let mut pos = 0;
    if header_token(bytes, &mut pos)? != b"P6" {
        return Err(Error::format("not a binary PPM (magic P6)"));
    }
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::format(format!("PPM maxval {maxval} is not 255")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::format("PPM dimensions overflow"))?;
    let raster = bytes.get(pos..).filter(|r| r.len() >= need).ok_or_else(|| Error::format("truncated PPM raster"))?;
    let pixels = raster[..need].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Ok(ImageBuffer::new(width, height, pixels)?)
}

pub fn encode_ppm(image: &ImageBuffer) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.pixels().iter().flatten());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_point() {
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let cloud = parse_point_bin(&bytes).unwrap();
        assert_eq!(cloud.points, vec![[1.0, 2.0, 3.0]]);
        assert_eq!(cloud.intensity, Some(vec![0.5]));
        assert_eq!(encode_point_bin(&cloud), bytes);
    }

    #[test]
    fn empty_and_ragged() {
        assert!(parse_point_bin(&[]).unwrap().is_empty());
        assert!(parse_point_bin(&[0u8; 17]).is_err());
    }

    #[test]
    fn non_finite_record_is_named() {
        let mut bytes = vec![0u8; 32];
        bytes[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = parse_point_bin(&bytes).unwrap_err().to_string();
        assert!(err.contains("record 1"), "{err}");
    }

    #[test]
    fn ppm_header_with_comment() {
        let mut bytes = b"P6 # made by hand\n1 1\n255\n".to_vec();
        bytes.extend([255, 0, 0]);
        let img = parse_ppm(&bytes).unwrap();
        assert_eq!(img.pixel(0, 0), [255, 0, 0]);
    }

    #[test]
    fn ppm_errors() {
        assert!(parse_ppm(b"P3\n1 1\n255\n\xff\0\0").is_err());
        assert!(parse_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").is_err());
        assert!(parse_ppm(b"P6\n2 1\n255\n\0\0\0").is_err());
        assert!(parse_ppm(b"P6\n2").is_err());
    }

    #[test]
    fn calib_wrong_count_names_key() {
        let text = "P2: 1 0 0 0 0 1 0 0 0 0 1 0\nR0_rect: 1 0 0 0 1 0 0 0\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n";
        let err = parse_calib(text).unwrap_err().to_string();
        assert!(err.contains("R0_rect"), "{err}");
    }
}
