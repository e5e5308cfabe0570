//! Corpus diagnostics: predicate/entity-pair co-occurrence statistics,
//! bidirectional-pair extraction, and label-guessing curves.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{EdgeRecord, SceneRecord};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Counts `f[i][k]` of predicate `i + 1` with ordered entity pair `k`,
/// where `k = (s - 1)·N + (o - 1)`. Background labels are not counted.
#[derive(Clone, Debug, PartialEq)]
pub struct CooccurrenceTable {
    pub n_entities: usize,
    pub n_predicates: usize,
    pub f: Matrix,
}

impl CooccurrenceTable {
    pub fn from_counts(n_entities: usize, f: Matrix) -> Result<Self> {
        if f.cols() != n_entities * n_entities {
            return Err(Error::Config(format!("{} columns for {n_entities} entity categories", f.cols())));
        }
        if f.data().iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
            return Err(Error::Config("co-occurrence counts must be nonnegative integers".into()));
        }
        Ok(Self { n_entities, n_predicates: f.rows(), f })
    }

    /// `entity_classes` and `predicate_classes` include the reserved label 0.
    pub fn from_scenes(scenes: &[SceneRecord], entity_classes: usize, predicate_classes: usize) -> Result<Self> {
        let n = entity_classes.saturating_sub(1);
        let m = predicate_classes.saturating_sub(1);
        let mut f = Matrix::zeros(m, n * n);
        for s in scenes {
            let idx = s.node_index();
            for e in &s.edges {
                let (sl, ol) = (s.nodes[idx[&e.subject]].label, s.nodes[idx[&e.object]].label);
                for (label, classes) in [(sl, entity_classes), (ol, entity_classes), (e.predicate, predicate_classes)] {
                    if label >= classes {
                        return Err(Error::Label { label, classes });
                    }
                }
                if e.predicate == 0 || sl == 0 || ol == 0 {
                    continue;
                }
                f[(e.predicate - 1, (sl - 1) * n + (ol - 1))] += 1.0;
            }
        }
        Ok(Self { n_entities: n, n_predicates: m, f })
    }

    fn row(&self, i: usize) -> Result<&[f64]> {
        if i >= self.n_predicates {
            return Err(Error::Label { label: i, classes: self.n_predicates });
        }
        Ok(self.f.row(i))
    }
}

/// Population variance of row `i` over all ordered entity pairs.
pub fn intra_class_variance(table: &CooccurrenceTable, i: usize) -> Result<f64> {
    let row = table.row(i)?;
    if row.is_empty() {
        return Ok(0.0);
    }
    let n = row.len() as f64;
    let mu = row.iter().sum::<f64>() / n;
    Ok(row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n)
}

/// `Σ_k |f_ik − f_jk| / (√Σ_k f_ik · √Σ_k f_jk)`.
pub fn inter_class_distance(table: &CooccurrenceTable, i: usize, j: usize) -> Result<f64> {
    let (a, b) = (table.row(i)?, table.row(j)?);
    let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
    if sa == 0.0 || sb == 0.0 {
        return Err(Error::Undefined(format!("distance between predicates {i} and {j}: a row is all zero")));
    }
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    Ok(num / (sa.sqrt() * sb.sqrt()))
}

/// Distances for every predicate pair; `None` where a row is empty.
pub fn distance_matrix(table: &CooccurrenceTable) -> Vec<Vec<Option<f64>>> {
    (0..table.n_predicates).map(|i| (0..table.n_predicates).map(|j| inter_class_distance(table, i, j).ok()).collect()).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BrSummary {
    pub scenes: usize,
    pub pairs: usize,
    pub asymmetric: usize,
    pub symmetric: usize,
    /// Directed-edge count per predicate over the kept pairs.
    pub predicate_histogram: BTreeMap<usize, usize>,
    /// Node count per entity category over the kept pairs' endpoints.
    pub entity_histogram: BTreeMap<usize, usize>,
}

/// Scenes reduced to relationship pairs present in both directions.
/// Scenes without such a pair are dropped.
pub fn build_br_dataset(scenes: &[SceneRecord]) -> (Vec<SceneRecord>, BrSummary) {
    let mut out = Vec::new();
    let mut summary = BrSummary::default();
    for s in scenes {
        let labels: HashMap<(usize, usize), usize> =
            s.edges.iter().filter(|e| e.predicate != 0).map(|e| ((e.subject, e.object), e.predicate)).collect();
        let idx = s.node_index();
        let mut kept: Vec<EdgeRecord> = Vec::new();
        for e in s.edges.iter().filter(|e| e.predicate != 0) {
            if labels.contains_key(&(e.object, e.subject)) {
                kept.push(*e);
                *summary.predicate_histogram.entry(e.predicate).or_default() += 1;
                if e.subject < e.object {
                    summary.pairs += 1;
                    if labels[&(e.object, e.subject)] == e.predicate {
                        summary.symmetric += 1;
                    } else {
                        summary.asymmetric += 1;
                    }
                    for end in [e.subject, e.object] {
                        *summary.entity_histogram.entry(s.nodes[idx[&end]].label).or_default() += 1;
                    }
                }
            }
        }
        if !kept.is_empty() {
            summary.scenes += 1;
            out.push(SceneRecord { id: s.id.clone(), nodes: s.nodes.clone(), edges: kept });
        }
    }
    (out, summary)
}

/// Graph element whose identity may be revealed to the guesser.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Context {
    Head,
    Tail,
    /// Predicate of the head-to-tail edge.
    H2t,
    /// Predicate of the tail-to-head edge (0 when absent).
    T2h,
}

impl Context {
    pub const NAMES: &'static str = "head, tail, h2t, t2h";
}

impl fmt::Display for Context {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Context::Head => "head",
            Context::Tail => "tail",
            Context::H2t => "h2t",
            Context::T2h => "t2h",
        })
    }
}

impl FromStr for Context {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head" => Ok(Context::Head),
            "tail" => Ok(Context::Tail),
            "h2t" => Ok(Context::H2t),
            "t2h" => Ok(Context::T2h),
            other => Err(Error::UnknownVariant { kind: "context", name: other.into(), expected: Self::NAMES }),
        }
    }
}

/// What is being guessed for each directed relationship edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// The edge's predicate.
    Edge,
    /// The head node's entity label.
    Node,
}

impl FromStr for Target {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edge" => Ok(Target::Edge),
            "node" => Ok(Target::Node),
            other => Err(Error::UnknownVariant { kind: "target", name: other.into(), expected: "edge, node" }),
        }
    }
}

struct Instance {
    head: usize,
    tail: usize,
    h2t: usize,
    t2h: usize,
}

impl Instance {
    fn get(&self, c: Context) -> usize {
        match c {
            Context::Head => self.head,
            Context::Tail => self.tail,
            Context::H2t => self.h2t,
            Context::T2h => self.t2h,
        }
    }
}

fn instances(scenes: &[SceneRecord]) -> Vec<Instance> {
    let mut out = Vec::new();
    for s in scenes {
        let idx = s.node_index();
        let labels: HashMap<(usize, usize), usize> = s.edges.iter().map(|e| ((e.subject, e.object), e.predicate)).collect();
        for e in s.edges.iter().filter(|e| e.predicate != 0) {
            out.push(Instance {
                head: s.nodes[idx[&e.subject]].label,
                tail: s.nodes[idx[&e.object]].label,
                h2t: e.predicate,
                t2h: labels.get(&(e.object, e.subject)).copied().unwrap_or(0),
            });
        }
    }
    out
}

/// Top-k guessing accuracy: `curve[k - 1]` is the share of evaluation
/// instances whose true target ranks within the first `k` labels when
/// labels are ordered by training frequency given the revealed context.
/// Ties fall back to overall training frequency, then label id; contexts
/// never seen in training use the overall frequency alone. The curve covers
/// every label seen in either split, so its last entry is 1.
pub fn guess_curve(train: &[SceneRecord], eval: &[SceneRecord], conditioning: &[Context], target: Target) -> Result<Vec<f64>> {
    let own = match target {
        Target::Edge => Context::H2t,
        Target::Node => Context::Head,
    };
    if conditioning.contains(&own) {
        return Err(Error::Config(format!("cannot condition on {own}, it is the target")));
    }
    let train_inst = instances(train);
    if train_inst.is_empty() {
        return Err(Error::Config("guess curve needs a nonempty training set".into()));
    }
    let eval_inst = instances(eval);
    if eval_inst.is_empty() {
        return Err(Error::Undefined("guess curve over an empty evaluation set".into()));
    }
    let mut cond: Vec<Context> = conditioning.to_vec();
    cond.sort();
    cond.dedup();

    let mut marginal: BTreeMap<usize, usize> = BTreeMap::new();
    let mut conditional: HashMap<Vec<usize>, BTreeMap<usize, usize>> = HashMap::new();
    for inst in &train_inst {
        let y = inst.get(own);
        *marginal.entry(y).or_default() += 1;
        let key: Vec<usize> = cond.iter().map(|&c| inst.get(c)).collect();
        *conditional.entry(key).or_default().entry(y).or_default() += 1;
    }
    let mut universe: Vec<usize> = marginal.keys().copied().chain(eval_inst.iter().map(|i| i.get(own))).collect();
    universe.sort_unstable();
    universe.dedup();

    let rank_with = |counts: Option<&BTreeMap<usize, usize>>| -> Vec<usize> {
        let mut order = universe.clone();
        order.sort_by_key(|y| {
            let c = counts.and_then(|m| m.get(y)).copied().unwrap_or(0);
            let g = marginal.get(y).copied().unwrap_or(0);
            (std::cmp::Reverse(c), std::cmp::Reverse(g), *y)
        });
        order
    };
    let mut cache: HashMap<Vec<usize>, Vec<usize>> = HashMap::new();
    let mut hits = vec![0usize; universe.len()];
    for inst in &eval_inst {
        let key: Vec<usize> = cond.iter().map(|&c| inst.get(c)).collect();
        let order = cache.entry(key.clone()).or_insert_with(|| rank_with(conditional.get(&key)));
        let pos = order.iter().position(|&y| y == inst.get(own)).expect("universe covers eval labels");
        hits[pos] += 1;
    }
    let mut acc = 0usize;
    Ok(hits
        .into_iter()
        .map(|h| {
            acc += h;
            acc as f64 / eval_inst.len() as f64
        })
        .collect())
}
