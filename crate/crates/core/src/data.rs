//! Scene records, JSON-lines I/O, and the planted-rule scene generator.
//!
//! Entity label 0 and predicate label 0 are reserved for "no object" and
//! "no relation"; generated scenes only use labels from 1 upward.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub label: usize,
    /// `[x1, y1, x2, y2]`, normalized to `[0, 1]`.
    pub bbox: [f64; 4],
    pub appearance_seed: u64,
    pub appearance: Vec<f64>,
    pub logits: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub subject: usize,
    pub object: usize,
    pub predicate: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub id: String,
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<EdgeRecord>,
}

impl SceneRecord {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::Scene { scene: self.id.clone(), reason });
        let mut ids = HashSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id) {
                return fail(format!("duplicate node id {}", n.id));
            }
            let [x1, y1, x2, y2] = n.bbox;
            let in_unit = n.bbox.iter().all(|v| (0.0..=1.0).contains(v));
            if !in_unit || x1 > x2 || y1 > y2 {
                return fail(format!("node {} has an invalid box {:?}", n.id, n.bbox));
            }
            if n.appearance.iter().chain(&n.logits).any(|v| !v.is_finite()) {
                return fail(format!("node {} has non-finite features", n.id));
            }
        }
        if let Some(first) = self.nodes.first() {
            let dims = (first.appearance.len(), first.logits.len());
            if let Some(n) = self.nodes.iter().find(|n| (n.appearance.len(), n.logits.len()) != dims) {
                return fail(format!("node {} feature widths differ from node {}", n.id, first.id));
            }
        }
        let mut pairs = HashSet::new();
        for e in &self.edges {
            for end in [e.subject, e.object] {
                if !ids.contains(&end) {
                    return fail(format!("edge {}->{} references missing node {end}", e.subject, e.object));
                }
            }
            if e.subject == e.object {
                return fail(format!("self-loop on node {}", e.subject));
            }
            if !pairs.insert((e.subject, e.object)) {
                return fail(format!("more than one edge {}->{}", e.subject, e.object));
            }
        }
        Ok(())
    }

    /// Position of each node id in `nodes`.
    pub fn node_index(&self) -> BTreeMap<usize, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect()
    }
}

/// Checks every scene and that feature widths agree across the corpus.
pub fn validate_corpus(scenes: &[SceneRecord]) -> Result<()> {
    let mut dims: Option<(usize, usize)> = None;
    for s in scenes {
        s.validate()?;
        if let Some(n) = s.nodes.first() {
            let d = (n.appearance.len(), n.logits.len());
            match dims {
                None => dims = Some(d),
                Some(want) if want != d => {
                    return Err(Error::Scene {
                        scene: s.id.clone(),
                        reason: format!("feature widths {d:?} differ from the corpus {want:?}"),
                    })
                }
                _ => {}
            }
        }
    }
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse { path: path.to_path_buf(), line: i + 1, reason: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads and validates a scene file.
pub fn read_scenes(path: &Path) -> Result<Vec<SceneRecord>> {
    let scenes: Vec<SceneRecord> = read_jsonl(path)?;
    validate_corpus(&scenes)?;
    Ok(scenes)
}

pub fn write_scenes(path: &Path, scenes: &[SceneRecord]) -> Result<()> {
    validate_corpus(scenes)?;
    write_jsonl(path, scenes)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredTriplet {
    pub subject: usize,
    pub object: usize,
    pub predicate: usize,
    pub score: f64,
}

/// Ranked predictions for one scene, in node ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub scene: String,
    pub triplets: Vec<ScoredTriplet>,
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    read_jsonl(path)
}

pub fn write_predictions(path: &Path, preds: &[PredictionRecord]) -> Result<()> {
    write_jsonl(path, preds)
}

/// Predicate assigned to each ordered pair of distinct real categories;
/// `table[s][o]`, with 0 wherever the rule is undefined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleTable {
    pub table: Vec<Vec<usize>>,
}

impl RuleTable {
    pub fn get(&self, subject: usize, object: usize) -> usize {
        self.table[subject][object]
    }

    /// Share of ordered pairs whose reverse carries a different predicate.
    pub fn asymmetric_fraction(&self) -> f64 {
        let n = self.table.len();
        let (mut asym, mut total) = (0usize, 0usize);
        for s in 1..n {
            for o in 1..n {
                if s != o {
                    total += 1;
                    asym += usize::from(self.table[s][o] != self.table[o][s]);
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            asym as f64 / total as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    /// Entity classes including the reserved label 0.
    pub entity_classes: usize,
    /// Predicate classes including the reserved label 0.
    pub predicate_classes: usize,
    pub nodes_per_scene: usize,
    /// Related (bidirectional) pairs per scene; the other nodes are unrelated.
    pub pairs_per_scene: usize,
    pub scenes: usize,
    pub seed: u64,
    /// Probability that an edge label is replaced by a different predicate.
    pub noise: f64,
    pub asymmetric_fraction: f64,
    pub appearance_dim: usize,
    pub appearance_sigma: f64,
    pub logit_noise: f64,
    /// Cycle through every (subject, object, predicate) combination instead
    /// of following a rule table; used for flat co-occurrence statistics.
    pub uniform: bool,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            entity_classes: 8,
            predicate_classes: 7,
            nodes_per_scene: 6,
            pairs_per_scene: 1,
            scenes: 500,
            seed: 0,
            noise: 0.05,
            asymmetric_fraction: 0.93,
            appearance_dim: 8,
            appearance_sigma: 1.0,
            logit_noise: 0.0,
            uniform: false,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.entity_classes < 3 {
            return bad(format!("entity_classes must be at least 3, got {}", self.entity_classes));
        }
        if self.predicate_classes < 3 {
            return bad(format!("predicate_classes must be at least 3, got {}", self.predicate_classes));
        }
        if self.nodes_per_scene < 2 * self.pairs_per_scene || self.nodes_per_scene == 0 {
            return bad(format!("{} nodes cannot hold {} pairs", self.nodes_per_scene, self.pairs_per_scene));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return bad(format!("noise must lie in [0, 1], got {}", self.noise));
        }
        if !(0.0..=1.0).contains(&self.asymmetric_fraction) {
            return bad(format!("asymmetric_fraction must lie in [0, 1], got {}", self.asymmetric_fraction));
        }
        if self.appearance_dim == 0 {
            return bad("appearance_dim must be positive".into());
        }
        if !(self.appearance_sigma >= 0.0 && self.logit_noise >= 0.0) {
            return bad("noise scales must be nonnegative".into());
        }
        Ok(())
    }
}

/// Generated corpus plus the tables that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub rule: RuleTable,
    pub prototypes: Vec<Vec<f64>>,
    pub scenes: Vec<SceneRecord>,
}

fn build_rule<R: Rng>(spec: &GeneratorSpec, rng: &mut R) -> RuleTable {
    let c = spec.entity_classes;
    let mut unordered: Vec<(usize, usize)> = (1..c).flat_map(|s| (s + 1..c).map(move |o| (s, o))).collect();
    unordered.shuffle(rng);
    let n_asym = (spec.asymmetric_fraction * unordered.len() as f64).round() as usize;
    let mut table = vec![vec![0; c]; c];
    for (k, &(s, o)) in unordered.iter().enumerate() {
        let a = rng.random_range(1..spec.predicate_classes);
        let b = if k < n_asym {
            let mut b = rng.random_range(1..spec.predicate_classes - 1);
            if b >= a {
                b += 1;
            }
            b
        } else {
            a
        };
        table[s][o] = a;
        table[o][s] = b;
    }
    RuleTable { table }
}

fn noisy_label<R: Rng>(label: usize, spec: &GeneratorSpec, rng: &mut R) -> usize {
    if rng.random::<f64>() < spec.noise {
        let mut other = rng.random_range(1..spec.predicate_classes - 1);
        if other >= label {
            other += 1;
        }
        other
    } else {
        label
    }
}

/// Box inside grid cell `cell` of a `side×side` grid, leaving a margin so
/// boxes in different cells never share a tight cover narrower than a cell.
fn box_in_cell<R: Rng>(cell: usize, side: usize, rng: &mut R) -> [f64; 4] {
    let w = 1.0 / side as f64;
    let (cx, cy) = ((cell % side) as f64 * w, (cell / side) as f64 * w);
    let x1 = cx + w * rng.random_range(0.05..0.45);
    let x2 = cx + w * rng.random_range(0.55..0.95);
    let y1 = cy + w * rng.random_range(0.05..0.45);
    let y2 = cy + w * rng.random_range(0.55..0.95);
    [x1, y1, x2, y2].map(|v: f64| v.clamp(0.0, 1.0))
}

fn node_features(label: usize, seed: u64, spec: &GeneratorSpec, prototypes: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let appearance = prototypes[label]
        .iter()
        .map(|p| {
            let z: f64 = StandardNormal.sample(&mut rng);
            p + spec.appearance_sigma * z
        })
        .collect();
    let logits = (0..spec.entity_classes)
        .map(|c| {
            let z: f64 = StandardNormal.sample(&mut rng);
            f64::from(u8::from(c == label)) + spec.logit_noise * z
        })
        .collect();
    (appearance, logits)
}

/// Generates `spec.scenes + extra` scenes from one rule table; the first
/// `spec.scenes` are identical to [`generate`]'s output.
pub fn generate_with_extra(spec: &GeneratorSpec, extra: usize) -> Result<Generated> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rule = build_rule(spec, &mut rng);
    let prototypes: Vec<Vec<f64>> =
        (0..spec.entity_classes).map(|_| (0..spec.appearance_dim).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();

    let real_ent = spec.entity_classes - 1;
    let real_pred = spec.predicate_classes - 1;
    let groups = spec.nodes_per_scene - spec.pairs_per_scene;
    let side = (groups as f64).sqrt().ceil() as usize;
    let mut uniform_counter = 0usize;
    let mut scenes = Vec::with_capacity(spec.scenes + extra);
    for t in 0..spec.scenes + extra {
        let mut cells: Vec<usize> = (0..side * side).collect();
        cells.shuffle(&mut rng);
        let mut nodes = Vec::with_capacity(spec.nodes_per_scene);
        let mut edges = Vec::new();
        let push_node = |label: usize, cell: usize, rng: &mut ChaCha8Rng, nodes: &mut Vec<NodeRecord>| {
            let bbox = box_in_cell(cell, side, rng);
            let appearance_seed = rng.random::<u64>();
            let (appearance, logits) = node_features(label, appearance_seed, spec, &prototypes);
            let id = nodes.len();
            nodes.push(NodeRecord { id, label, bbox, appearance_seed, appearance, logits });
            id
        };
        for &cell in &cells[..spec.pairs_per_scene] {
            let (s_cat, o_cat, forward, backward) = if spec.uniform {
                let k = uniform_counter;
                uniform_counter += 1;
                let s = 1 + k % real_ent;
                let o = 1 + (k / real_ent) % real_ent;
                let p = 1 + (k / (real_ent * real_ent)) % real_pred;
                (s, o, p, p)
            } else {
                let s = rng.random_range(1..spec.entity_classes);
                let mut o = rng.random_range(1..spec.entity_classes - 1);
                if o >= s {
                    o += 1;
                }
                (s, o, rule.get(s, o), rule.get(o, s))
            };
            let s_id = push_node(s_cat, cell, &mut rng, &mut nodes);
            let o_id = push_node(o_cat, cell, &mut rng, &mut nodes);
            let forward = if spec.uniform { forward } else { noisy_label(forward, spec, &mut rng) };
            let backward = if spec.uniform { backward } else { noisy_label(backward, spec, &mut rng) };
            edges.push(EdgeRecord { subject: s_id, object: o_id, predicate: forward });
            edges.push(EdgeRecord { subject: o_id, object: s_id, predicate: backward });
        }
        for &cell in &cells[spec.pairs_per_scene..groups] {
            let label = rng.random_range(1..spec.entity_classes);
            push_node(label, cell, &mut rng, &mut nodes);
        }
        let scene = SceneRecord { id: format!("s{t:05}"), nodes, edges };
        scene.validate()?;
        scenes.push(scene);
    }
    Ok(Generated { rule, prototypes, scenes })
}

pub fn generate(spec: &GeneratorSpec) -> Result<Generated> {
    generate_with_extra(spec, 0)
}

/// Training split and a held-out split drawn from the same rule table.
pub fn generate_split(spec: &GeneratorSpec, heldout: usize) -> Result<(Generated, Vec<SceneRecord>)> {
    let mut g = generate_with_extra(spec, heldout)?;
    let rest = g.scenes.split_off(spec.scenes);
    Ok((g, rest))
}

/// Counts of bidirectional pairs in a corpus and how many carry different
/// predicates in the two directions.
pub fn pair_asymmetry(scenes: &[SceneRecord]) -> (usize, usize) {
    let (mut pairs, mut asym) = (0, 0);
    for s in scenes {
        let labels: BTreeMap<(usize, usize), usize> = s.edges.iter().map(|e| ((e.subject, e.object), e.predicate)).collect();
        for (&(a, b), &p) in &labels {
            if a < b {
                if let Some(&q) = labels.get(&(b, a)) {
                    pairs += 1;
                    asym += usize::from(p != q);
                }
            }
        }
    }
    (pairs, asym)
}
