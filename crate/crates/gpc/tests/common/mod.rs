#![allow(dead_code)]

use std::path::{Path, PathBuf};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/kitti")
}

/// Pixel of a velodyne point by the full homogeneous chain
/// `P2 * [R0 0; 0 1] * [Tr; 0 0 0 1] * [x 1]`, or `None` when behind the
/// camera or outside the image.
pub fn oracle_pixel(text: &str, p: [f64; 3], width: usize, height: usize) -> Option<(usize, usize)> {
    let get = |key: &str| -> Vec<f64> {
        let line = text.lines().find(|l| l.starts_with(&format!("{key}:"))).unwrap();
        line.split_once(':').unwrap().1.split_whitespace().map(|v| v.parse().unwrap()).collect()
    };
    let (p2, r0, tr) = (get("P2"), get("R0_rect"), get("Tr_velo_to_cam"));
    let mut r = [[0.0; 4]; 4];
    let mut t = [[0.0; 4]; 4];
    r[3][3] = 1.0;
    t[3][3] = 1.0;
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = r0[3 * i + j];
        }
        for j in 0..4 {
            t[i][j] = tr[4 * i + j];
        }
    }
    let mul = |a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]| {
        let mut m = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                m[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        m
    };
    let rt = mul(&r, &t);
    let x = [p[0], p[1], p[2], 1.0];
    let cam: Vec<f64> = (0..4).map(|i| (0..4).map(|k| rt[i][k] * x[k]).sum()).collect();
    let h: Vec<f64> = (0..3).map(|i| (0..4).map(|k| p2[4 * i + k] * cam[k]).sum()).collect();
    if h[2] <= 0.0 {
        return None;
    }
    let (u, v) = ((h[0] / h[2] + 0.5).floor(), (h[1] / h[2] + 0.5).floor());
    (u >= 0.0 && v >= 0.0 && (u as usize) < width && (v as usize) < height).then_some((u as usize, v as usize))
}

/// `(point, u, v, rgb)` rows written by the fixture generator.
pub fn expected_rows() -> Vec<(usize, usize, usize, [u8; 3])> {
    let text = std::fs::read_to_string(fixtures().join("expected_000000.txt")).unwrap();
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let f: Vec<usize> = l.split_whitespace().map(|v| v.parse().unwrap()).collect();
            (f[0], f[1], f[2], [f[3] as u8, f[4] as u8, f[5] as u8])
        })
        .collect()
}
