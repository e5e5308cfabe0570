//! Shared fixtures for the criterion benches.

use sgg_core::data::{generate, GeneratorSpec, SceneRecord};
use sgg_core::metrics::{GroundTruthGraph, RankedTriplets};
use sgg_core::model::{predict_scene, ModelConfig, ModelParams, SceneInput};

/// Default-scale scenes with `nodes` nodes each.
pub fn scenes(nodes: usize, count: usize) -> Vec<SceneRecord> {
    let spec = GeneratorSpec { nodes_per_scene: nodes, scenes: count, ..GeneratorSpec::default() };
    generate(&spec).expect("valid spec").scenes
}

/// Resolved default configuration and its initial parameters.
pub fn model(scenes: &[SceneRecord], cfg: ModelConfig) -> (ModelConfig, ModelParams) {
    let mut cfg = cfg;
    cfg.resolve(scenes).expect("corpus fits");
    let params = ModelParams::init(&cfg).expect("valid config");
    (cfg, params)
}

/// Ranked predictions of an untrained model with their ground truths.
pub fn rankings(scenes: &[SceneRecord]) -> (Vec<String>, Vec<RankedTriplets>, Vec<GroundTruthGraph>) {
    let (cfg, params) = model(scenes, ModelConfig::default());
    let mut ids = Vec::new();
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for s in scenes {
        let input = SceneInput::from_scene(s).expect("valid scene");
        preds.push(predict_scene(&params, &input, cfg.triplets).expect("forward").1);
        gts.push(GroundTruthGraph::from_scene(s).expect("valid scene"));
        ids.push(s.id.clone());
    }
    (ids, preds, gts)
}
