//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use gpc::checkpoint::{decode_checkpoint, encode_checkpoint};
use gpc::kitti::{parse_calib, parse_point_bin, parse_ppm};
use gpc::pipeline::{prepare, PrepareDirs};
use gpc_core::augment::AugmentConfig;
use gpc_core::geometry::{byte_to_rgb, harvest_colors, Rgb};
use gpc_core::gradcheck::check_gradients;
use gpc_core::hinting::HintedSample;
use gpc_core::losses::{balanced_softmax_loss, batch_class_weights, cross_entropy_loss, ClassWeights, LossKind};
use gpc_core::matrix::Matrix;
use gpc_core::model::{Head, ModelConfig, ModelParams};
use gpc_core::palette::{fit_kmeans, KMeansOptions};
use gpc_core::rng::{self, gaussian, uniform};
use gpc_core::synth::{bayes_accuracy, generate_scene, synth_palette, ColorMode, SceneSpec};
use gpc_core::trainer::{evaluate_frames, EvalOptions, Metrics, Serial, TrainConfig, Trainer};
use gpc_core::{ColorPalette, ColoredPointCloud};
use rand::seq::SliceRandom;
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn run(id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f));
    let elapsed = start.elapsed();
    let (pass, detail) = match outcome {
        Ok(v) if elapsed > budget => (false, format!("{}; over the {:.0} s budget", v.detail, budget.as_secs_f64())),
        Ok(v) => (v.pass, v.detail),
        Err(_) => (false, "panicked".to_string()),
    };
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("{tag} [{id}] {name}: {detail} ({:.1} s)", elapsed.as_secs_f64());
    pass
}

fn gradient_correctness() -> Verdict {
    let config = |head| ModelConfig {
        classes: 4,
        feature_dim: 8,
        encoder_widths: vec![8, 16],
        global_width: 16,
        decoder_widths: vec![16],
        decoder_neighbors: 3,
        head,
    };
    let mut r = rng::stream(&[1]);
    let points: Vec<[f64; 3]> = (0..6).map(|_| [uniform(&mut r, -2.0, 2.0), uniform(&mut r, -2.0, 2.0), uniform(&mut r, -1.0, 1.0)]).collect();
    let colors: Vec<Rgb> = (0..6).map(|_| [r.gen(), r.gen(), r.gen()]).collect();
    let sample = HintedSample::new(points, vec![0, 1, 2, 3, 2, 0], vec![true, false, false, false, true, false], 4).unwrap();
    let mut worst = Vec::new();
    for kind in [LossKind::BalancedSoftmax, LossKind::CrossEntropy, LossKind::Mse, LossKind::SmoothL1] {
        let head = if kind.is_regression() { Head::Regression } else { Head::Classification };
        let params = ModelParams::init(config(head), 7).unwrap();
        let report = check_gradients(&params, &sample, &colors, kind, 1e-4).unwrap();
        let max = report.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
        worst.push((kind.name(), max));
    }
    let pass = worst.iter().all(|(_, e)| *e < 1e-4);
    let detail = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    verdict(pass, format!("max relative error {detail}"))
}

fn balanced_softmax_identities() -> Verdict {
    let mut r = rng::stream(&[2]);
    let (mut bs_ce, mut uniform_gap, mut scale_gap) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let (n, k) = (r.gen_range(1..40), r.gen_range(2..20));
        let logits = Matrix::from_vec(n, k, (0..n * k).map(|_| uniform(&mut r, -8.0, 8.0)).collect()).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
        let bs = balanced_softmax_loss(&logits, &labels, &ClassWeights::uniform(k)).unwrap();
        let ce = cross_entropy_loss(&logits, &labels).unwrap();
        bs_ce = bs_ce.max((bs.value - ce.value).abs());
        bs_ce = bs.grad.as_slice().iter().zip(ce.grad.as_slice()).fold(bs_ce, |m, (a, b)| m.max((a - b).abs()));

        let flat = Matrix::from_vec(1, k, vec![uniform(&mut r, -3.0, 3.0); k]).unwrap();
        let per_point = cross_entropy_loss(&flat, &labels[..1]).unwrap();
        uniform_gap = uniform_gap.max((per_point.value - (k as f64).ln()).abs());

        let w = batch_class_weights(&labels, k, 0.1).unwrap();
        let base = balanced_softmax_loss(&logits, &labels, &w).unwrap().value;
        for s in [1e-3, 0.5, 7.0, 1e4] {
            let scaled = ClassWeights { alpha: w.alpha.iter().map(|a| a * s).collect(), epsilon: w.epsilon };
            let v = balanced_softmax_loss(&logits, &labels, &scaled).unwrap().value;
            scale_gap = scale_gap.max((v - base).abs());
        }
    }
    let pass = bs_ce < 1e-9 && uniform_gap < 1e-6 && scale_gap < 1e-9;
    verdict(pass, format!("|BS-CE| {bs_ce:.1e}, |L-ln K| {uniform_gap:.1e}, alpha rescale {scale_gap:.1e}"))
}

fn partition_inertia(points: &[Rgb], mask: u32) -> f64 {
    let mut total = 0.0;
    for side in [true, false] {
        let members: Vec<&Rgb> = points.iter().enumerate().filter(|(i, _)| (mask >> i & 1 == 1) == side).map(|(_, p)| p).collect();
        if members.is_empty() {
            continue;
        }
        let n = members.len() as f64;
        let mean: Vec<f64> = (0..3).map(|c| members.iter().map(|p| p[c]).sum::<f64>() / n).collect();
        total += members.iter().map(|p| (0..3).map(|c| (p[c] - mean[c]).powi(2)).sum::<f64>()).sum::<f64>();
    }
    total
}

fn kmeans_contract() -> Verdict {
    let mut r = rng::stream(&[3]);
    let mut monotone = true;
    for d in 0..10u64 {
        let n = r.gen_range(50..400);
        let pixels: Vec<Rgb> = (0..n).map(|_| [r.gen(), r.gen(), r.gen()]).collect();
        let fit = fit_kmeans(&pixels, &KMeansOptions { rng_seed: d, ..KMeansOptions::new(2 + d as usize) }).unwrap();
        monotone &= fit.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-9);
    }

    let pixels: Vec<Rgb> = (0..137).map(|_| [r.gen(), r.gen(), r.gen()]).collect();
    let fit = fit_kmeans(&pixels, &KMeansOptions::new(1)).unwrap();
    let mean_gap = (0..3)
        .map(|c| (fit.centroids[0][c] - pixels.iter().map(|p| p[c]).sum::<f64>() / pixels.len() as f64).abs())
        .fold(0.0, f64::max);

    let centers = [[0.25, 0.3, 0.2], [0.7, 0.6, 0.75]];
    let set: Vec<Rgb> = (0..20).map(|i| centers[i % 2].map(|c| c + 0.08 * gaussian(&mut r))).collect();
    // Point 19 is fixed to one side; the other 2^19 splits cover every
    // two-cluster partition.
    let oracle = (0..1u32 << 19).map(|m| partition_inertia(&set, m)).fold(f64::INFINITY, f64::min);
    let k2 = fit_kmeans(&set, &KMeansOptions::new(2)).unwrap().inertia();
    let k2_gap = (k2 - oracle).abs();

    let pass = monotone && mean_gap < 1e-9 && k2_gap < 1e-9;
    verdict(pass, format!("monotone {monotone}, |K=1 centroid - mean| {mean_gap:.1e}, |K=2 - oracle| {k2_gap:.1e}"))
}

fn tiny_model(classes: usize) -> ModelConfig {
    ModelConfig {
        feature_dim: 16,
        encoder_widths: vec![16, 32],
        global_width: 32,
        decoder_widths: vec![32],
        decoder_neighbors: 8,
        ..ModelConfig::new(classes)
    }
}

fn study_model(classes: usize) -> ModelConfig {
    ModelConfig {
        feature_dim: 32,
        encoder_widths: vec![32, 64],
        global_width: 64,
        decoder_widths: vec![64],
        decoder_neighbors: 16,
        ..ModelConfig::new(classes)
    }
}

fn scenes(spec: &SceneSpec, seeds: std::ops::Range<u64>, color_offset: u64) -> Vec<ColoredPointCloud> {
    seeds
        .map(|s| generate_scene(&SceneSpec { rng_seed: s, color_seed: s + color_offset, ..spec.clone() }).unwrap().cloud)
        .collect()
}

fn permute<T: Copy>(v: &[T], perm: &[usize]) -> Vec<T> {
    perm.iter().map(|&i| v[i]).collect()
}

fn equivariance_and_determinism() -> Verdict {
    let params = ModelParams::init(tiny_model(6), 4).unwrap();
    let mut equivariant = true;
    for trial in 0..50u64 {
        let mut r = rng::stream(&[trial, 4]);
        let n = r.gen_range(2..120);
        let points: Vec<[f64; 3]> = (0..n).map(|_| [uniform(&mut r, -20.0, 20.0), uniform(&mut r, -20.0, 20.0), uniform(&mut r, -1.0, 3.0)]).collect();
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..6)).collect();
        let mask: Vec<bool> = (0..n).map(|_| r.gen_bool(0.2)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let a = params.forward(&HintedSample::new(points.clone(), labels.clone(), mask.clone(), 6).unwrap()).unwrap();
        let b = params.forward(&HintedSample::new(permute(&points, &perm), permute(&labels, &perm), permute(&mask, &perm), 6).unwrap()).unwrap();
        equivariant &= perm.iter().enumerate().all(|(row, &src)| b.row(row) == a.row(src));
    }

    let spec = SceneSpec { color_mode: ColorMode::Variant, ..Default::default() };
    let frames = scenes(&spec, 0..8, 50);
    let palette = synth_palette(spec.palette_size).unwrap();
    let config = TrainConfig {
        epochs: 3,
        batch_size: 3,
        max_lr: 0.005,
        rng_seed: 11,
        augment: AugmentConfig { target_points: 256, ..Default::default() },
        ..Default::default()
    };
    let full = || {
        let mut t = Trainer::new(tiny_model(palette.k()), config.clone()).unwrap();
        t.run(&frames, &palette, &Serial).unwrap();
        encode_checkpoint(&t).unwrap()
    };
    let first = full();
    let identical = first == full();

    let mut t = Trainer::new(tiny_model(palette.k()), config.clone()).unwrap();
    t.train_epoch(&frames, &palette, &Serial).unwrap();
    let mut resumed = decode_checkpoint(&encode_checkpoint(&t).unwrap()).unwrap();
    resumed.run(&frames, &palette, &Serial).unwrap();
    let resume_equal = encode_checkpoint(&resumed).unwrap() == first;

    verdict(equivariant && identical && resume_equal, format!("equivariant {equivariant}, identical checkpoints {identical}, resume-equivalent {resume_equal}"))
}

/// Per-scene unknown-point accuracies of a model.
fn unknown_accuracies(model: &Trainer, test: &[ColoredPointCloud], palette: &ColorPalette, eval_ratio: f64) -> (Vec<f64>, Metrics) {
    let frames = evaluate_frames(&model.params, test, palette, &EvalOptions::new(eval_ratio, 2024), &Serial).unwrap();
    let mut total = Metrics::new(palette.k());
    frames.iter().for_each(|m| total.merge(m));
    (frames.iter().map(|m| m.unknown_accuracy().unwrap()).collect(), total)
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Shared protocol of the hint experiments: 200 variant-mode training scenes,
/// batch 4, 40 epochs (2000 steps), 30 held-out scenes.
struct HintStudy {
    spec: SceneSpec,
    palette: ColorPalette,
    train: Vec<ColoredPointCloud>,
    test: Vec<ColoredPointCloud>,
}

impl HintStudy {
    fn new() -> Self {
        let spec = SceneSpec { color_mode: ColorMode::Variant, palette_size: 8, object_colors: 4, ..Default::default() };
        HintStudy {
            palette: synth_palette(spec.palette_size).unwrap(),
            train: scenes(&spec, 0..200, 1_000_000),
            test: scenes(&spec, 5000..5030, 9_000_000),
            spec,
        }
    }

    fn train(&self, seed_ratio: f64, loss: LossKind, data: &[ColoredPointCloud], epochs: usize) -> Trainer {
        let config = TrainConfig {
            epochs,
            batch_size: 4,
            max_lr: 0.003,
            seed_ratio,
            loss,
            rng_seed: 7,
            augment: AugmentConfig { target_points: 512, ..Default::default() },
            ..Default::default()
        };
        let mut t = Trainer::new(study_model(self.palette.k()), config).unwrap();
        t.run(data, &self.palette, &Serial).unwrap();
        assert!(t.optimizer.step <= 2000);
        t
    }
}

fn main() -> ExitCode {
    let mut all = true;
    all &= run(1, "gradient correctness", Duration::from_secs(10), gradient_correctness);
    all &= run(2, "balanced softmax identities", Duration::from_secs(1), balanced_softmax_identities);
    all &= run(3, "k-means contract", Duration::from_secs(5), kmeans_contract);
    all &= run(4, "equivariance and determinism", Duration::from_secs(30), equivariance_and_determinism);

    let study = HintStudy::new();
    let mut models: Vec<(f64, Trainer)> = Vec::new();
    let c5_start = Instant::now();
    all &= run(5, "hint benefit", Duration::from_secs(600), || {
        for ratio in [0.0, 0.2] {
            models.push((ratio, study.train(ratio, LossKind::BalancedSoftmax, &study.train, 40)));
        }
        let (none, _) = unknown_accuracies(&models[0].1, &study.test, &study.palette, 0.0);
        let (hinted, _) = unknown_accuracies(&models[1].1, &study.test, &study.palette, 0.2);
        let ((m0, se0), (m2, _)) = (mean_se(&none), mean_se(&hinted));
        let bayes = bayes_accuracy(&study.spec);
        let pass = study.spec.box_fraction() >= 0.4 && m0 <= bayes + 3.0 * se0 && m2 - m0 >= 0.10;
        verdict(pass, format!("box fraction {:.3}, ratio 0.0: {m0:.4} (bayes {bayes:.4} + 3 SE {:.4}), ratio 0.2: {m2:.4}, gain {:.4}", study.spec.box_fraction(), 3.0 * se0, m2 - m0))
    });
    let c5_time = c5_start.elapsed();

    // Reuses the two models of criterion 5; their training time is charged here too.
    all &= run(6, "seed-ratio ordering", Duration::from_secs(900).saturating_sub(c5_time), || {
        models.push((1.0, study.train(1.0, LossKind::BalancedSoftmax, &study.train, 40)));
        let acc: Vec<(f64, f64)> = models
            .iter()
            .map(|(ratio, m)| (*ratio, mean_se(&unknown_accuracies(m, &study.test, &study.palette, 0.2).0).0))
            .collect();
        let pass = acc[1].1 >= acc[0].1 && acc[1].1 >= acc[2].1;
        let detail = acc.iter().map(|(r, a)| format!("trained {r}: {a:.4}")).collect::<Vec<_>>().join(", ");
        verdict(pass, format!("unknown accuracy at eval ratio 0.2, {detail}"))
    });

    all &= run(7, "loss ablation", Duration::from_secs(900), || {
        let spec = SceneSpec { n_boxes: 3, points_per_box: 40, ground_points: 600, ..Default::default() };
        let ground = spec.ground_points as f64 / spec.total_points() as f64;
        let train = scenes(&spec, 0..200, 0);
        let test = scenes(&spec, 5000..5030, 0);
        let study = HintStudy { palette: synth_palette(spec.palette_size).unwrap(), train: Vec::new(), test, spec };
        let mut mean_class = Vec::new();
        for loss in [LossKind::BalancedSoftmax, LossKind::CrossEntropy] {
            let model = study.train(0.2, loss, &train, 20);
            let (_, total) = unknown_accuracies(&model, &study.test, &study.palette, 0.2);
            mean_class.push(total.mean_class_accuracy().unwrap());
        }
        let pass = ground >= 0.8 && mean_class[0] >= mean_class[1];
        verdict(pass, format!("ground share {ground:.3}, per-class mean accuracy bs {:.4}, ce {:.4}", mean_class[0], mean_class[1]))
    });

    all &= run(8, "ingestion fidelity", Duration::from_secs(1), || {
        let dir = common::fixtures();
        let cloud = parse_point_bin(&fs::read(dir.join("velodyne/000000.bin")).unwrap()).unwrap();
        let text = fs::read_to_string(dir.join("calib/000000.txt")).unwrap();
        let image = parse_ppm(&fs::read(dir.join("image_2/000000.ppm")).unwrap()).unwrap();
        let colored = harvest_colors(&cloud, &image, &parse_calib(&text).unwrap());
        let oracle: Vec<([f64; 3], Rgb)> = cloud
            .points
            .iter()
            .filter_map(|p| common::oracle_pixel(&text, *p, image.width(), image.height()).map(|(u, v)| (*p, byte_to_rgb(image.pixel(u, v)))))
            .collect();
        let matches = oracle.len() == colored.len()
            && oracle.iter().enumerate().all(|(j, (p, c))| colored.cloud.points[j] == *p && colored.colors[j] == *c);

        let out = tempfile::tempdir().unwrap();
        let dirs = PrepareDirs { velodyne: &dir.join("velodyne"), calib: &dir.join("calib"), images: &dir.join("image_2"), out: out.path() };
        let snapshot = || {
            let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(out.path())
                .unwrap()
                .map(|e| e.unwrap().path())
                .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
                .collect();
            files.sort();
            files
        };
        prepare(&dirs, &Serial).unwrap();
        let first = snapshot();
        prepare(&dirs, &Serial).unwrap();
        let stable = !first.is_empty() && first == snapshot();
        verdict(matches && stable, format!("{} of {} points colored, oracle match {matches}, prepare bit-stable {stable}", colored.len(), cloud.len()))
    });

    if all {
        println!("all acceptance criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("some acceptance criteria fail");
        ExitCode::FAILURE
    }
}
