use gpc::pipeline::Threads;
use gpc_core::augment::AugmentConfig;
use gpc_core::model::ModelConfig;
use gpc_core::synth::{generate_scene, synth_palette, ColorMode, SceneSpec};
use gpc_core::trainer::{evaluate_frames, EvalOptions, Executor, Serial, TrainConfig, Trainer};

#[test]
fn results_come_back_in_job_order() {
    let pool = Threads::new(3).unwrap();
    assert_eq!(pool.map(100, &|i| i * i), (0..100).map(|i| i * i).collect::<Vec<_>>());
}

#[test]
fn thread_count_does_not_change_training() {
    let spec = SceneSpec { n_boxes: 2, points_per_box: 30, ground_points: 80, color_mode: ColorMode::Variant, ..Default::default() };
    let frames: Vec<_> = (0..6).map(|s| generate_scene(&SceneSpec { rng_seed: s, color_seed: s, ..spec.clone() }).unwrap().cloud).collect();
    let palette = synth_palette(spec.palette_size).unwrap();
    let model = ModelConfig {
        feature_dim: 8,
        encoder_widths: vec![8],
        global_width: 8,
        decoder_widths: vec![8],
        decoder_neighbors: 4,
        ..ModelConfig::new(palette.k())
    };
    let config = TrainConfig {
        epochs: 2,
        batch_size: 3,
        augment: AugmentConfig { target_points: 100, ..Default::default() },
        ..Default::default()
    };
    let mut serial = Trainer::new(model.clone(), config.clone()).unwrap();
    serial.run(&frames, &palette, &Serial).unwrap();
    let pool = Threads::new(4).unwrap();
    let mut threaded = Trainer::new(model, config).unwrap();
    threaded.run(&frames, &palette, &pool).unwrap();
    assert_eq!(serial, threaded);

    let opts = EvalOptions::new(0.2, 1);
    assert_eq!(
        evaluate_frames(&serial.params, &frames, &palette, &opts, &Serial).unwrap(),
        evaluate_frames(&serial.params, &frames, &palette, &opts, &pool).unwrap()
    );
}
