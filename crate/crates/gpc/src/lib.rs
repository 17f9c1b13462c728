//! Data ingestion, file formats and batch jobs around [`gpc_core`].
//!
//! Labels are 0-based in memory and 1-based in every file and flag a user
//! touches (seed files, PLY output, synth label files).

pub mod binio;
pub mod checkpoint;
pub mod error;
pub mod frames;
pub mod fsio;
pub mod keyvalue;
pub mod kitti;
pub mod palette_file;
pub mod pipeline;
pub mod ply;
pub mod seeds;
pub mod tensor_file;

pub use error::{Error, Result};
pub use gpc_core;
