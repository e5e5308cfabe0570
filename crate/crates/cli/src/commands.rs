use std::collections::HashMap;
use std::fs;
use std::path::Path;

use anyhow::{Context as _, Result};
use sgg_core::analysis::{
    build_br_dataset, distance_matrix, guess_curve, intra_class_variance, BrSummary, Context, CooccurrenceTable, Target,
};
use sgg_core::data::{
    generate_split, pair_asymmetry, read_predictions, read_scenes, write_predictions, write_scenes, GeneratorSpec, PredictionRecord,
    SceneRecord,
};
use sgg_core::metrics::{evaluate, GroundTruthGraph, Metric, RankedTriplets, Report};
use sgg_core::model::{load_checkpoint, predict_scene, save_checkpoint, train, Checkpoint, EpochLog, ModelConfig, SceneInput};

use crate::args::{AnalyzeArgs, BrBuildArgs, Cli, Command, EvalArgs, GenerateArgs, GuessCurveArgs, TrainArgs};
use crate::config::layered;
use crate::manifest::{sibling, Run};
use crate::Invalid;

type Env = Vec<(String, String)>;

pub fn run(cli: &Cli, env: Env) -> Result<()> {
    let config = cli.config.as_deref();
    match &cli.command {
        Command::Generate(a) => generate(cli.seed, config, env, a),
        Command::Train(a) => train_cmd(cli.seed, config, env, a),
        Command::Eval(a) => eval(a),
        Command::Analyze(a) => analyze(a),
        Command::BrBuild(a) => br_build(a),
        Command::GuessCurve(a) => guess(a),
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn generate(seed: Option<u64>, config: Option<&Path>, env: Env, a: &GenerateArgs) -> Result<()> {
    let mut spec: GeneratorSpec = layered(&GeneratorSpec::default(), config, env)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(n) = a.scenes {
        spec.scenes = n;
    }
    let inputs: Vec<&Path> = config.into_iter().collect();
    let run = Run::start("generate", &spec, Some(spec.seed), &inputs)?;
    let (g, heldout) = generate_split(&spec, a.heldout)?;
    write_scenes(&a.out, &g.scenes)?;
    let mut outputs = vec![a.out.as_path()];
    if let Some(h) = &a.heldout_out {
        write_scenes(h, &heldout)?;
        outputs.push(h.as_path());
    }
    let (pairs, asym) = pair_asymmetry(&g.scenes);
    println!("scenes {} ({} held out)", g.scenes.len(), heldout.len());
    println!("rule table asymmetric fraction {:.4}", g.rule.asymmetric_fraction());
    if pairs > 0 {
        println!("emitted pairs {pairs}, asymmetric fraction {:.4}", asym as f64 / pairs as f64);
    }
    run.finish(&a.out, &outputs)?;
    Ok(())
}

fn train_config(seed: Option<u64>, config: Option<&Path>, env: Env, a: &TrainArgs) -> Result<ModelConfig> {
    let mut cfg: ModelConfig = layered(&ModelConfig::default(), config, env)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if let Some(g) = a.graph {
        cfg.graph = g;
    }
    if let Some(f) = a.fusion {
        cfg.fusion = f;
    }
    cfg.lih &= !a.no_lih;
    cfg.dse &= !a.no_dse;
    cfg.gih &= !a.no_gih;
    cfg.ar &= !a.no_ar;
    Ok(cfg)
}

fn log_header(cfg: &ModelConfig, with_metrics: bool) -> Vec<String> {
    let mut h: Vec<String> = ["epoch", "L_ent", "L_pred", "L_ar", "L_total"].map(String::from).into();
    if with_metrics {
        for (m, ks) in [(Metric::Recall, &cfg.recall_ks), (Metric::MeanRecall, &cfg.recall_ks), (Metric::PairRecall, &cfg.pair_ks)] {
            h.extend(ks.iter().map(|k| format!("{}@{k}", m.name())));
        }
    }
    h
}

fn write_log(path: &Path, header: &[String], log: &[EpochLog]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for e in log {
        let values: HashMap<&str, f64> = e.metrics.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        let mut row = vec![e.epoch.to_string(), e.l_ent.to_string(), e.l_pred.to_string(), e.l_ar.to_string(), e.l_total.to_string()];
        row.extend(header[5..].iter().map(|h| values.get(h.as_str()).map(f64::to_string).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn train_cmd(seed: Option<u64>, config: Option<&Path>, env: Env, a: &TrainArgs) -> Result<()> {
    let mut cfg = train_config(seed, config, env, a)?;
    let scenes = read_scenes(&a.train)?;
    let eval_scenes = a.eval.as_deref().map(read_scenes).transpose()?;
    cfg.resolve(&scenes)?;
    let mut inputs = vec![a.train.as_path()];
    inputs.extend(a.eval.as_deref());
    inputs.extend(config);
    let run = Run::start("train", &cfg, Some(cfg.seed), &inputs)?;
    let trained = train(&cfg, &scenes, eval_scenes.as_deref())?;
    for e in &trained.log {
        let metrics: Vec<String> = e.metrics.iter().map(|(k, v)| format!("{k} {v:.4}")).collect();
        println!("epoch {:>3}  loss {:.5}  {}", e.epoch, e.l_total, metrics.join("  "));
    }
    save_checkpoint(&a.out, &Checkpoint::new(trained.config, trained.params, trained.bank))?;
    let log_path = a.log.clone().unwrap_or_else(|| sibling(&a.out, "log.csv"));
    write_log(&log_path, &log_header(&cfg, eval_scenes.is_some() && cfg.log_metrics), &trained.log)?;
    run.finish(&a.out, &[a.out.as_path(), log_path.as_path()])?;
    Ok(())
}

fn write_report(path: &Path, report: &Report) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["level", "scene", "metric", "k", "value"])?;
    for r in &report.per_scene {
        w.write_record(["scene", &r.scene, r.metric.name(), &r.k.to_string(), &r.value.to_string()])?;
    }
    for ((metric, k), value) in &report.aggregate {
        w.write_record(["aggregate", "", metric.name(), &k.to_string(), &value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let scenes = read_scenes(&a.corpus)?;
    let defaults = ModelConfig::default();
    let (preds, records, cfg) = match (&a.checkpoint, &a.predictions) {
        (Some(path), _) => {
            let ckpt = load_checkpoint(path)?;
            ckpt.config.check_corpus(&scenes)?;
            let mut preds = Vec::with_capacity(scenes.len());
            let mut records = Vec::with_capacity(scenes.len());
            for s in &scenes {
                let (_, ranked) = predict_scene(&ckpt.params, &SceneInput::from_scene(s)?, ckpt.config.triplets)?;
                records.push(PredictionRecord { scene: s.id.clone(), triplets: ranked.as_slice().to_vec() });
                preds.push(ranked);
            }
            (preds, Some(records), ckpt.config)
        }
        (None, Some(path)) => {
            let mut by_scene: HashMap<String, PredictionRecord> =
                read_predictions(path)?.into_iter().map(|r| (r.scene.clone(), r)).collect();
            let preds = scenes
                .iter()
                .map(|s| {
                    let r =
                        by_scene.remove(&s.id).ok_or_else(|| Invalid(format!("{}: no predictions for scene {}", path.display(), s.id)))?;
                    Ok(RankedTriplets::new(r.triplets)?)
                })
                .collect::<Result<Vec<_>>>()?;
            (preds, None, defaults)
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    let recall_ks = a.recall_ks.clone().unwrap_or(cfg.recall_ks.clone());
    let pair_ks = a.pair_ks.clone().unwrap_or(cfg.pair_ks.clone());
    if recall_ks.iter().chain(&pair_ks).any(|&k| k == 0) {
        return Err(Invalid("cutoffs must be at least 1".into()).into());
    }
    let mut inputs = vec![a.corpus.as_path()];
    inputs.extend(a.checkpoint.as_deref().or(a.predictions.as_deref()));
    let run = Run::start("eval", &serde_json::json!({ "recall_ks": recall_ks, "pair_ks": pair_ks }), None, &inputs)?;
    let ids: Vec<String> = scenes.iter().map(|s| s.id.clone()).collect();
    let gts: Vec<GroundTruthGraph> = scenes.iter().map(GroundTruthGraph::from_scene).collect::<Result<_, _>>()?;
    let report = evaluate(&ids, &preds, &gts, &recall_ks, &pair_ks)?;
    write_report(&a.out, &report)?;
    let mut outputs = vec![a.out.as_path()];
    if let (Some(path), Some(records)) = (&a.pred_out, &records) {
        write_predictions(path, records)?;
        outputs.push(path.as_path());
    }
    for ((metric, k), value) in &report.aggregate {
        println!("{}@{k} {value:.4}", metric.name());
    }
    run.finish(&a.out, &outputs)?;
    Ok(())
}

/// Class counts including label 0, read off the corpus.
fn class_counts(scenes: &[SceneRecord]) -> (usize, usize) {
    let nodes = scenes.iter().flat_map(|s| &s.nodes);
    let ent = nodes.map(|n| (n.label + 1).max(n.logits.len())).max().unwrap_or(1);
    let pred = scenes.iter().flat_map(|s| &s.edges).map(|e| e.predicate + 1).max().unwrap_or(1);
    (ent, pred)
}

fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let scenes = read_scenes(&a.corpus)?;
    let (ent, pred) = class_counts(&scenes);
    let run = Run::start("analyze", &serde_json::json!({ "entity_classes": ent, "predicate_classes": pred }), None, &[&a.corpus])?;
    let table = CooccurrenceTable::from_scenes(&scenes, ent, pred)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let n = table.n_entities;

    let co_path = a.out_dir.join("cooccurrence.csv");
    let mut w = csv_writer(&co_path)?;
    w.write_record(["predicate", "subject", "object", "count"])?;
    for i in 0..table.n_predicates {
        for k in 0..n * n {
            let row = [i + 1, k / n + 1, k % n + 1, table.f[(i, k)] as usize].map(|v| v.to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;

    let var_path = a.out_dir.join("variance.csv");
    let mut w = csv_writer(&var_path)?;
    w.write_record(["predicate", "frequency", "variance"])?;
    for i in 0..table.n_predicates {
        let freq: f64 = table.f.row(i).iter().sum();
        let var = intra_class_variance(&table, i)?;
        w.write_record([(i + 1).to_string(), freq.to_string(), var.to_string()])?;
    }
    w.flush()?;

    let dist_path = a.out_dir.join("distance.csv");
    let mut w = csv_writer(&dist_path)?;
    w.write_record(["predicate_i", "predicate_j", "distance"])?;
    for (i, row) in distance_matrix(&table).iter().enumerate() {
        for (j, d) in row.iter().enumerate() {
            w.write_record([(i + 1).to_string(), (j + 1).to_string(), d.map(|d| d.to_string()).unwrap_or_default()])?;
        }
    }
    w.flush()?;

    // Guess curves with the corpus as both the lookup and the scored set.
    let curve_path = a.out_dir.join("guess_curves.csv");
    let mut w = csv_writer(&curve_path)?;
    w.write_record(["target", "condition", "k", "accuracy"])?;
    let settings: [(Target, &[Context]); 6] = [
        (Target::Edge, &[]),
        (Target::Edge, &[Context::Head, Context::Tail]),
        (Target::Edge, &[Context::Head, Context::Tail, Context::T2h]),
        (Target::Node, &[]),
        (Target::Node, &[Context::Tail]),
        (Target::Node, &[Context::Tail, Context::H2t]),
    ];
    let has_edges = scenes.iter().any(|s| s.edges.iter().any(|e| e.predicate != 0));
    for (target, cond) in settings.into_iter().filter(|_| has_edges) {
        let name = if cond.is_empty() { "none".to_string() } else { cond.iter().map(ToString::to_string).collect::<Vec<_>>().join("+") };
        let target_name = match target {
            Target::Edge => "edge",
            Target::Node => "node",
        };
        for (k, acc) in guess_curve(&scenes, &scenes, cond, target)?.iter().enumerate() {
            w.write_record([target_name, &name, &(k + 1).to_string(), &acc.to_string()])?;
        }
    }
    w.flush()?;

    println!("{} predicates over {} ordered entity pairs", table.n_predicates, n * n);
    run.finish(&a.out_dir.join("analyze"), &[&co_path, &var_path, &dist_path, &curve_path])?;
    Ok(())
}

fn write_summary(path: &Path, s: &BrSummary) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["field", "label", "count"])?;
    for (field, count) in [("scenes", s.scenes), ("pairs", s.pairs), ("asymmetric", s.asymmetric), ("symmetric", s.symmetric)] {
        w.write_record([field, "", &count.to_string()])?;
    }
    for (field, hist) in [("predicate", &s.predicate_histogram), ("entity", &s.entity_histogram)] {
        for (label, count) in hist {
            w.write_record([field, &label.to_string(), &count.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn br_build(a: &BrBuildArgs) -> Result<()> {
    let scenes = read_scenes(&a.corpus)?;
    let run = Run::start("br-build", &serde_json::Value::Null, None, &[&a.corpus])?;
    let (subset, summary) = build_br_dataset(&scenes);
    write_scenes(&a.out, &subset)?;
    let summary_path = sibling(&a.out, "summary.csv");
    write_summary(&summary_path, &summary)?;
    println!("pairs {} (asymmetric {}, symmetric {}) in {} scenes", summary.pairs, summary.asymmetric, summary.symmetric, summary.scenes);
    run.finish(&a.out, &[&a.out, &summary_path])?;
    Ok(())
}

fn guess(a: &GuessCurveArgs) -> Result<()> {
    let train_scenes = read_scenes(&a.train)?;
    let eval_scenes = read_scenes(&a.eval)?;
    let cond: Vec<String> = a.condition.iter().map(ToString::to_string).collect();
    let run = Run::start("guess-curve", &serde_json::json!({ "condition": cond, "target": a.target }), None, &[&a.train, &a.eval])?;
    let curve = guess_curve(&train_scenes, &eval_scenes, &a.condition, a.target)?;
    let mut w = csv_writer(&a.out)?;
    w.write_record(["k", "accuracy"])?;
    for (k, acc) in curve.iter().enumerate() {
        w.write_record([(k + 1).to_string(), acc.to_string()])?;
    }
    w.flush()?;
    if let Some(first) = curve.first() {
        println!("top-1 {first:.4} over {} labels", curve.len());
    }
    run.finish(&a.out, &[&a.out])?;
    Ok(())
}
