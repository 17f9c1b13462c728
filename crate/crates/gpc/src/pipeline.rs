//! Directory-level jobs behind the subcommands.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use gpc_core::geometry::harvest_colors;
use gpc_core::palette::{fit_kmeans, sample_image_pixels, select_images, KMeansFit, KMeansOptions};
use gpc_core::synth::{generate_scene, synth_palette};
use gpc_core::trainer::Executor;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frames::{encode_frame, encode_labels, frame_path, render_manifest, ManifestEntry, MANIFEST};
use crate::fsio;
use crate::keyvalue::SynthSpec;
use crate::kitti::{encode_point_bin, parse_calib, parse_point_bin, parse_ppm};
use crate::palette_file::save_palette;

/// Runs jobs on a rayon pool; results come back in job order.
pub struct Threads {
    pool: rayon::ThreadPool,
}

impl Threads {
    pub fn new(threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Usage(format!("cannot start {threads} threads: {e}")))?;
        Ok(Threads { pool })
    }
}

impl Executor for Threads {
    fn map<R: Send>(&self, jobs: usize, f: &(dyn Fn(usize) -> R + Sync)) -> Vec<R> {
        self.pool.install(|| (0..jobs).into_par_iter().map(f).collect())
    }
}

/// File stems with the given extension, sorted.
pub fn stems(dir: &Path, ext: &str) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string());
            }
        }
    }
    Ok(out)
}

pub struct PrepareDirs<'a> {
    pub velodyne: &'a Path,
    pub calib: &'a Path,
    pub images: &'a Path,
    pub out: &'a Path,
}

#[derive(Debug, Default)]
pub struct PrepareReport {
    pub frames: Vec<ManifestEntry>,
    pub warnings: Vec<String>,
}

fn prepare_frame(dirs: &PrepareDirs<'_>, id: &str) -> Result<ManifestEntry> {
    let cloud = parse_point_bin(&fsio::read(&dirs.velodyne.join(format!("{id}.bin")))?)?;
    let calib = parse_calib(&fsio::read_text(&dirs.calib.join(format!("{id}.txt")))?)?;
    let image = parse_ppm(&fsio::read(&dirs.images.join(format!("{id}.ppm")))?)?;
    let colored = harvest_colors(&cloud, &image, &calib);
    fsio::write_atomic(&frame_path(dirs.out, id), &encode_frame(&colored)?)?;
    Ok(ManifestEntry { id: id.to_string(), points: colored.len() })
}

/// Colors every frame found as `<id>.bin`, `<id>.txt` and `<id>.ppm` in the
/// three input directories. Frames missing a counterpart are skipped with a
/// warning; frames run in parallel on `exec`.
pub fn prepare<E: Executor>(dirs: &PrepareDirs<'_>, exec: &E) -> Result<PrepareReport> {
    let bins = stems(dirs.velodyne, "bin")?;
    let calibs = stems(dirs.calib, "txt")?;
    let images = stems(dirs.images, "ppm")?;
    let mut report = PrepareReport::default();
    let all: BTreeSet<&String> = bins.iter().chain(&calibs).chain(&images).collect();
    let mut ids = Vec::new();
    for id in all {
        let missing: Vec<&str> = [(&bins, "point file"), (&calibs, "calibration"), (&images, "image")]
            .iter()
            .filter(|(set, _)| !set.contains(id))
            .map(|(_, what)| *what)
            .collect();
        if missing.is_empty() {
            ids.push(id.clone());
        } else {
            report.warnings.push(format!("frame {id}: missing {}, skipped", missing.join(" and ")));
        }
    }
    if ids.is_empty() {
        return Err(Error::format("no frame has a point file, calibration and image"));
    }
    fsio::create_dir(dirs.out)?;
    let results = exec.map(ids.len(), &|i| prepare_frame(dirs, &ids[i]).map_err(|e| Error::format(format!("frame {}: {e}", ids[i]))));
    report.frames = results.into_iter().collect::<Result<_>>()?;
    fsio::write_atomic(&dirs.out.join(MANIFEST), render_manifest(&report.frames).as_bytes())?;
    Ok(report)
}

pub struct PaletteJob<'a> {
    pub datasets: &'a [PathBuf],
    pub k: usize,
    pub images_per_dataset: usize,
    pub pixels_per_image: usize,
    pub seed: u64,
}

/// Samples pixels from up to `images_per_dataset` images of every dataset
/// directory, then runs K-means. Images are read one at a time.
pub fn fit_palette(job: &PaletteJob<'_>) -> Result<KMeansFit> {
    let mut pixels = Vec::new();
    let mut image_key = 0u64;
    for (d, dir) in job.datasets.iter().enumerate() {
        let names: Vec<String> = stems(dir, "ppm")?.into_iter().collect();
        if names.is_empty() {
            return Err(Error::format(format!("{}: no .ppm images", dir.display())));
        }
        for i in select_images(names.len(), job.images_per_dataset, job.seed.wrapping_add(d as u64)) {
            let path = dir.join(format!("{}.ppm", names[i]));
            let image = parse_ppm(&fsio::read(&path)?).map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
            pixels.extend(sample_image_pixels(&image, job.pixels_per_image, job.seed, image_key));
            image_key += 1;
        }
    }
    let opts = KMeansOptions { rng_seed: job.seed, ..KMeansOptions::new(job.k) };
    Ok(fit_kmeans(&pixels, &opts)?)
}

/// Writes `<id>.bin`, `<id>.lbl` (label and instance u16 pairs, labels
/// 1-based), `<id>.gpcf`, the manifest and `palette.gpcp`.
pub fn write_synth(spec: &SynthSpec, out: &Path) -> Result<Vec<ManifestEntry>> {
    if spec.frames == 0 {
        return Err(Error::Usage("frames must be at least 1".into()));
    }
    fsio::create_dir(out)?;
    let mut entries = Vec::new();
    for i in 0..spec.frames {
        let scene = generate_scene(&spec.frame(i))?;
        let id = format!("{i:06}");
        let one_based: Vec<usize> = scene.labels.iter().map(|l| l + 1).collect();
        fsio::write_atomic(&out.join(format!("{id}.bin")), &encode_point_bin(&scene.cloud.cloud))?;
        fsio::write_atomic(&out.join(format!("{id}.lbl")), &encode_labels(&one_based, &scene.instance_ids)?)?;
        fsio::write_atomic(&frame_path(out, &id), &encode_frame(&scene.cloud)?)?;
        entries.push(ManifestEntry { id, points: scene.cloud.len() });
    }
    save_palette(&out.join("palette.gpcp"), &synth_palette(spec.scene.palette_size)?)?;
    fsio::write_atomic(&out.join(MANIFEST), render_manifest(&entries).as_bytes())?;
    Ok(entries)
}
