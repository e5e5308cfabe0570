//! Criteria that need trained models. Every configuration shares one corpus,
//! one held-out split and one training recipe; runs are shared between
//! criteria.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use sgg_core::attract_repel::cluster_stats;
use sgg_core::data::{generate_split, GeneratorSpec, SceneRecord};
use sgg_core::global_interaction::{build_adjacency, gat_forward, gcn_forward, gih_forward, GraphParams, GraphState, GraphVariant};
use sgg_core::metrics::Metric;
use sgg_core::model::{evaluate_model, forward_input, train, ModelConfig, SceneInput};
use sgg_core::numerics::Matrix;

use crate::common::{rng, uniform, Verdict};

const SEEDS: [u64; 3] = [0, 1, 2];
const HELD_OUT: usize = 200;
const MARGIN: f64 = 0.02;

/// Shared training recipe: stepped learning rate over the 50-epoch budget.
fn recipe(seed: u64) -> ModelConfig {
    ModelConfig {
        lr: 1e-2,
        lr_milestones: vec![30, 40],
        epochs: 50,
        seed,
        recall_ks: vec![4],
        pair_ks: vec![2],
        log_metrics: false,
        ..ModelConfig::default()
    }
}

/// Component switches and overrides of each named configuration.
fn configure(name: &str, seed: u64) -> ModelConfig {
    let full = recipe(seed);
    let base = ModelConfig { lih: false, dse: false, gih: false, ar: false, ..recipe(seed) };
    match name {
        "full" => full,
        "full-dse" => ModelConfig { dse: false, ..full },
        "full-war0" => ModelConfig { w_ar: 0.0, ..full },
        "full-gcn" => ModelConfig { graph: GraphVariant::Gcn, ..full },
        "full-gat" => ModelConfig { graph: GraphVariant::Gat, ..full },
        "base" => base,
        "lih" => ModelConfig { lih: true, ..base },
        "dse" => ModelConfig { dse: true, ..base },
        "gih" => ModelConfig { gih: true, ..base },
        "ar" => ModelConfig { ar: true, ..base },
        other => panic!("unknown configuration {other}"),
    }
}

fn needed(criteria: &[u32]) -> Vec<&'static str> {
    let mut names = Vec::new();
    for &id in criteria {
        names.extend_from_slice(match id {
            4 => &["full", "full-dse"][..],
            5 => &["base", "lih", "dse", "gih", "ar", "full"],
            6 => &["full", "full-war0"],
            8 => &["full", "full-gcn", "full-gat"],
            _ => &[],
        });
    }
    let mut seen = Vec::new();
    for n in names {
        if !seen.contains(&n) {
            seen.push(n);
        }
    }
    seen
}

struct Outcome {
    recall4: f64,
    pair2: f64,
    /// Mean intra-class minus mean inter-class cosine of held-out
    /// relationship-edge embeddings.
    cosine_gap: f64,
    secs: f64,
}

fn cosine_gap(params: &sgg_core::model::ModelParams, held: &[SceneRecord]) -> f64 {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for s in held {
        let input = SceneInput::from_scene(s).unwrap();
        let pred = forward_input(params, &input).unwrap();
        for m in input.foreground() {
            rows.push(pred.edge_embeddings.row(m).to_vec());
            labels.push(input.edge_labels[m]);
        }
    }
    let stats = cluster_stats(&Matrix::from_rows(&rows), &labels).unwrap();
    stats.intra - stats.inter
}

pub struct Runs {
    outcomes: BTreeMap<&'static str, Vec<Outcome>>,
}

impl Runs {
    pub fn collect(criteria: &[u32]) -> Self {
        let (train_split, held) = generate_split(&GeneratorSpec::default(), HELD_OUT).unwrap();
        let mut outcomes = BTreeMap::new();
        for name in needed(criteria) {
            let runs = SEEDS
                .iter()
                .map(|&seed| {
                    let mut cfg = configure(name, seed);
                    cfg.resolve(&train_split.scenes).unwrap();
                    let t0 = Instant::now();
                    let trained = train(&cfg, &train_split.scenes, None).unwrap();
                    let report = evaluate_model(&trained.params, &held, &cfg).unwrap();
                    let secs = t0.elapsed().as_secs_f64();
                    let o = Outcome {
                        recall4: report.get(Metric::Recall, 4).unwrap(),
                        pair2: report.get(Metric::PairRecall, 2).unwrap(),
                        cosine_gap: cosine_gap(&trained.params, &held),
                        secs,
                    };
                    println!(
                        "  {name:<9} seed {seed}: R@4 {:.4}  pR@2 {:.4}  cosine gap {:.4}  {:.0}s",
                        o.recall4, o.pair2, o.cosine_gap, o.secs
                    );
                    o
                })
                .collect();
            outcomes.insert(name, runs);
        }
        Self { outcomes }
    }

    pub fn len(&self) -> usize {
        self.outcomes.values().map(Vec::len).sum()
    }

    fn runs(&self, name: &str) -> &[Outcome] {
        &self.outcomes[name]
    }

    fn mean(&self, name: &str, f: impl Fn(&Outcome) -> f64) -> f64 {
        let r = self.runs(name);
        r.iter().map(f).sum::<f64>() / r.len() as f64
    }

    pub fn verdict(&self, id: u32) -> Verdict {
        match id {
            4 => self.learnability(),
            5 => self.ablation(),
            6 => self.attract_repel(),
            8 => self.edge_awareness(),
            _ => unreachable!(),
        }
    }

    fn learnability(&self) -> Verdict {
        let full = self.runs("full");
        let ablated = self.runs("full-dse");
        let mut pass = true;
        let mut parts = Vec::new();
        for (i, (f, a)) in full.iter().zip(ablated).enumerate() {
            pass &= f.pair2 >= 0.80 && f.secs < 600.0 && f.pair2 - a.pair2 >= 0.25;
            parts.push(format!("seed {}: pR@2 {:.3} in {:.0}s, without DSE {:.3}", SEEDS[i], f.pair2, f.secs, a.pair2));
        }
        Verdict::new(4, "BRC learnability", pass, format!("{} (need >= 0.80 within 600s and a gap >= 0.25)", parts.join("; ")))
    }

    fn ablation(&self) -> Verdict {
        let r = |n: &str| self.mean(n, |o| o.recall4);
        let (base, full) = (r("base"), r("full"));
        let mut pass = true;
        let mut parts = vec![format!("base {base:.4}")];
        for single in ["lih", "dse", "gih", "ar"] {
            let s = r(single);
            let above_base = s - base >= MARGIN;
            let below_full = full - s >= MARGIN;
            pass &= above_base && below_full;
            let mark = |ok: bool| if ok { "" } else { "!" };
            parts.push(format!(
                "{single} {s:.4} ({:+.4}{} vs base, full {:+.4}{})",
                s - base,
                mark(above_base),
                full - s,
                mark(below_full)
            ));
        }
        parts.push(format!("full {full:.4}"));
        Verdict::new(
            5,
            "ablation monotonicity",
            pass,
            format!("mean held-out R@4 over 3 seeds: {} (margin {MARGIN}, ! marks a miss)", parts.join(", ")),
        )
    }

    fn attract_repel(&self) -> Verdict {
        let with = self.mean("full", |o| o.cosine_gap);
        let without = self.mean("full-war0", |o| o.cosine_gap);
        let shrink = if with > 0.0 { 1.0 - without / with } else { f64::NAN };
        let pass = with >= 0.2 && shrink >= 0.25;
        Verdict::new(
            6,
            "attract & repel effect",
            pass,
            format!(
                "cosine gap {with:.4} with w_ar = 1, {without:.4} with w_ar = 0, shrink {:.1}% (need gap >= 0.2, shrink >= 25%)",
                100.0 * shrink
            ),
        )
    }

    fn edge_awareness(&self) -> Verdict {
        let (gih_moves, baselines_still) = perturbation_toys();
        let r = |n: &str| self.mean(n, |o| o.recall4);
        let (gih, gcn, gat) = (r("full"), r("full-gcn"), r("full-gat"));
        let pass = gih_moves && baselines_still && gih >= gcn && gih >= gat;
        Verdict::new(
            8,
            "GIH edge awareness",
            pass,
            format!(
                "edge perturbation moves GIH nodes: {gih_moves}, leaves GCN/GAT nodes unchanged: {baselines_still}; mean R@4 GIH {gih:.4}, GCN {gcn:.4}, GAT {gat:.4}"
            ),
        )
    }
}

/// Connected toys: perturbing edge rows must move every GIH node output and
/// no GCN or GAT node output.
fn perturbation_toys() -> (bool, bool) {
    let (mut gih_moves, mut baselines_still) = (true, true);
    for seed in 0..10 {
        let mut r = rng(300 + seed);
        let n = r.random_range(2..6);
        let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (r.random_range(0..i), i)).collect();
        edges.push((1, 0));
        let adj = build_adjacency(n, &edges).unwrap();
        let nodes = uniform(n, 4, &mut r);
        let before = GraphState::new(nodes.clone(), uniform(edges.len(), 4, &mut r)).unwrap();
        let after = GraphState::new(nodes, uniform(edges.len(), 4, &mut r)).unwrap();
        for variant in [GraphVariant::Gih, GraphVariant::Gcn, GraphVariant::Gat] {
            let p = GraphParams::init(variant, 4, 2, &mut r);
            let run = |s: &GraphState| {
                match variant {
                    GraphVariant::Gih => gih_forward(s, &adj, &p),
                    GraphVariant::Gcn => gcn_forward(s, &adj, &p),
                    GraphVariant::Gat => gat_forward(s, &adj, &p),
                }
                .unwrap()
                .nodes
            };
            let (a, b) = (run(&before), run(&after));
            let row_moved = |i: usize| a.row(i) != b.row(i);
            match variant {
                GraphVariant::Gih => gih_moves &= (0..n).all(row_moved),
                _ => baselines_still &= a == b,
            }
        }
    }
    (gih_moves, baselines_still)
}
