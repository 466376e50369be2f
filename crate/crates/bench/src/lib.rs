//! Shared fixtures for the benchmarks.

use hazn_core::config::RunConfig;
use hazn_core::experiment::{image_stage_samples, object_stage_samples, part_stage_samples, train_stage, SceneSource};
use hazn_core::scorer::Stage;
use hazn_core::synth::generate_scene;
use hazn_core::{SceneConfig, SceneSample, StageModels};

/// A default-sized scene.
pub fn scene(seed: u64) -> SceneSample {
    generate_scene(seed, &SceneConfig::default()).expect("default scene config is valid")
}

/// Models trained briefly on a few scenes: enough for realistic proposal
/// counts, not for accuracy.
pub fn quick_models() -> StageModels {
    let mut cfg = RunConfig::default();
    cfg.train.iter_mut().for_each(|t| t.iterations = 150);
    let source = SceneSource::Synthetic {
        seed: 9,
        cfg: cfg.scene.clone(),
        n: 6,
    };
    let image = train_stage(Stage::Image, &image_stage_samples(&source, &cfg).unwrap(), &cfg).unwrap();
    let object = train_stage(
        Stage::Object,
        &object_stage_samples(&source, &cfg, Some(&image.params)).unwrap(),
        &cfg,
    )
    .unwrap();
    let part_samples = part_stage_samples(&source, &cfg, Some((&image.params, &object.params))).unwrap();
    let part = train_stage(Stage::Part, &part_samples, &cfg).unwrap();
    StageModels::new(image.params, Some(object.params), Some(part.params)).unwrap()
}
