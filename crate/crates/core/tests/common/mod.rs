#![allow(dead_code)]

use std::path::Path;

use fusionbench::dataset::{RebalancePlan, SplitSpec};
use fusionbench::models::{BackboneSpec, FusionModelSpec, Strategy};
use fusionbench::pipeline::{load_prepared, prepare, InputPaths};
use fusionbench::synthgen::{difficulty_dial, generate_scene, write_scene, ClassCounts, SceneSpec};
use fusionbench::training::{ExperimentConfig, ExperimentData, TrainConfig};

/// 24 x 30 cells of 20 m at coarse resolutions: 10/40/20 px tiles.
pub fn desk_scene(level: f64, seed: u64) -> SceneSpec {
    let spec = SceneSpec {
        n_rows: 24,
        n_cols: 30,
        thermal_resolution_m: 2.0,
        rgb_resolution_m: 0.5,
        lidar_resolution_m: 1.0,
        counts: ClassCounts {
            midden: 60,
            mound: 60,
            water: 60,
        },
        seed,
        ..SceneSpec::default()
    };
    difficulty_dial(&spec, level).unwrap()
}

pub fn desk_split() -> SplitSpec {
    SplitSpec {
        train_cols: 0..18,
        val_cols: 18..22,
        test_cols: 22..30,
    }
}

/// Synthesizes `scene` under `dir/scene`, prepares it under `dir` and loads it.
pub fn prepared(scene: &SceneSpec, split: &SplitSpec, dir: &Path) -> ExperimentData {
    let generated = generate_scene(scene).unwrap();
    let scene_dir = dir.join("scene");
    write_scene(&generated, &scene_dir).unwrap();
    prepare(
        &InputPaths::in_dir(&scene_dir),
        scene.cell_size_m,
        split,
        &RebalancePlan::default(),
        dir,
    )
    .unwrap();
    load_prepared(dir).unwrap()
}

pub fn tiny_config(strategy: Strategy, out_dir: &Path, n_trials: usize, max_epochs: usize) -> ExperimentConfig {
    let mut model = FusionModelSpec::new(strategy, BackboneSpec::tiny_cnn(32));
    model.per_modality_feature_dim = 32;
    model.gate_hidden_dim = 32;
    ExperimentConfig {
        model,
        train: TrainConfig {
            batch_size: 32,
            max_epochs,
            n_trials,
            ..TrainConfig::default()
        },
        rebalance: RebalancePlan::default(),
        pretrained: None,
        out_dir: out_dir.to_path_buf(),
        trials: None,
    }
}

/// 8 x 16 cells at 4.0 / 1.0 / 2.0 m (5 / 20 / 10 px tiles) for fast tests.
pub fn small_scene(seed: u64) -> (SceneSpec, SplitSpec) {
    let spec = SceneSpec {
        n_rows: 8,
        n_cols: 16,
        thermal_resolution_m: 4.0,
        rgb_resolution_m: 1.0,
        lidar_resolution_m: 2.0,
        counts: ClassCounts {
            midden: 14,
            mound: 14,
            water: 12,
        },
        seed,
        ..SceneSpec::default()
    };
    let split = SplitSpec {
        train_cols: 0..10,
        val_cols: 10..13,
        test_cols: 13..16,
    };
    (spec, split)
}

pub fn small_config(strategy: Strategy, out_dir: &Path, n_trials: usize, max_epochs: usize) -> ExperimentConfig {
    let mut cfg = tiny_config(strategy, out_dir, n_trials, max_epochs);
    cfg.rebalance = RebalancePlan { target_per_class: 12 };
    cfg
}
