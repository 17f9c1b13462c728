#![cfg_attr(not(test), no_std)]
//! Grounded point colorization: pre-training a point-cloud encoder by
//! predicting quantized LiDAR point colors from geometry plus a sparse set of
//! revealed ("seed") colors.
//!
//! This crate is the allocation-only numerical core. It has no IO: parsers
//! and file formats, the command line, and thread pools live in the `gpc`
//! companion crate.
//!
//! Class labels are 0-based (`0..K`) everywhere in this crate. Files and the
//! command line present them 1-based.

extern crate alloc;

pub mod augment;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod hinting;
pub mod losses;
pub mod math;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod palette;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::{Calibration, ColoredPointCloud, ImageBuffer, PointCloud, Rgb, Vec3};
pub use matrix::Matrix;
pub use palette::ColorPalette;
