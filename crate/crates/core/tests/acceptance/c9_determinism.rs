//! generate -> train -> eval twice with the same seed, compared byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use sgg_core::data::{generate, read_scenes, write_scenes, GeneratorSpec};
use sgg_core::model::{evaluate_model, load_checkpoint, save_checkpoint, train, Checkpoint, ModelConfig};

use crate::common::Verdict;

const FILES: [&str; 3] = ["corpus.json", "model.json", "report.txt"];

fn pipeline(dir: &Path) {
    let spec = GeneratorSpec { scenes: 120, seed: 11, ..GeneratorSpec::default() };
    write_scenes(&dir.join(FILES[0]), &generate(&spec).unwrap().scenes).unwrap();

    let scenes = read_scenes(&dir.join(FILES[0])).unwrap();
    let mut cfg = ModelConfig {
        node_dim: 12,
        edge_dim: 12,
        lih_att_dim: 6,
        gih_layers: 2,
        epochs: 3,
        lr: 1e-2,
        seed: 5,
        recall_ks: vec![4, 8],
        pair_ks: vec![2, 4],
        ..ModelConfig::default()
    };
    cfg.resolve(&scenes).unwrap();
    let trained = train(&cfg, &scenes, Some(&scenes)).unwrap();
    save_checkpoint(&dir.join(FILES[1]), &Checkpoint::new(cfg, trained.params, trained.bank)).unwrap();

    let ckpt = load_checkpoint(&dir.join(FILES[1])).unwrap();
    let report = evaluate_model(&ckpt.params, &scenes, &ckpt.config).unwrap();
    let mut text = String::new();
    for row in &report.per_scene {
        writeln!(text, "{}", serde_json::to_string(row).unwrap()).unwrap();
    }
    for ((metric, k), v) in &report.aggregate {
        writeln!(text, "{}@{k} {v:?}", metric.name()).unwrap();
    }
    std::fs::write(dir.join(FILES[2]), text).unwrap();
}

pub fn run() -> Verdict {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        pipeline(d.path());
    }
    let mut differing = Vec::new();
    let mut bytes = 0;
    for f in FILES {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        bytes += a.len();
        if a != b {
            differing.push(f);
        }
    }
    let detail = if differing.is_empty() {
        format!("{} artifacts ({bytes} bytes) identical across two runs", FILES.len())
    } else {
        format!("artifacts differ: {}", differing.join(", "))
    };
    Verdict::new(9, "determinism", differing.is_empty(), detail)
}
