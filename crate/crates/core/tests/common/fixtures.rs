//! Small synthetic training fixtures.

use std::path::Path;

use terracer::models::{preset, ModelConfig};
use terracer::raster::{synthesize_scene, BandMode, Normalization, Scene};
use terracer::training::{TileSet, TrainConfig};

pub const FIXTURE_CLASSES: usize = 5;

/// Normalized synthetic scenes restricted to the bands `model` consumes.
pub fn scenes(seeds: &[u64], size: usize, classes: usize, model: &ModelConfig) -> Vec<Scene> {
    let mut raw: Vec<Scene> = seeds.iter().map(|&s| synthesize_scene(s, size, classes, 0.0).unwrap()).collect();
    let norm = Normalization::fit(raw.iter()).unwrap();
    for s in &mut raw {
        norm.apply(s).unwrap();
    }
    let mode = BandMode::for_count(model.input_bands()).unwrap();
    raw.iter().map(|s| s.band_subset(mode).unwrap()).collect()
}

/// Two 128-px scenes cut into eight 64-px tiles.
pub fn fine_tiles(model: &ModelConfig) -> TileSet {
    TileSet::new(scenes(&[100, 101], 128, FIXTURE_CLASSES, model), 64, 64, false).unwrap()
}

pub fn fixture_model(id: &str) -> ModelConfig {
    preset(id).unwrap().with_classes(FIXTURE_CLASSES)
}

/// Training config over in-memory tiles; `manifest` is unused by `train_on`.
pub fn config(id: &str, strategy: &str, dir: &Path, extra: serde_json::Value) -> TrainConfig {
    let mut v = serde_json::json!({
        "model": id, "manifest": "unused.json", "strategy": strategy,
        "checkpoint_dir": dir, "epochs": 1000,
    });
    for (k, val) in extra.as_object().unwrap() {
        v[k] = val.clone();
    }
    serde_json::from_value(v).unwrap()
}
