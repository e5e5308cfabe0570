//! Triplet recall under the predicate-classification regime: ground-truth
//! node identities are given, so a predicted triplet matches a ground-truth
//! one on exact `(subject, object, predicate)` identity.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::data::{EdgeRecord, SceneRecord, ScoredTriplet};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: usize,
    pub object: usize,
    pub predicate: usize,
}

impl From<&ScoredTriplet> for Triplet {
    fn from(t: &ScoredTriplet) -> Self {
        Triplet { subject: t.subject, object: t.object, predicate: t.predicate }
    }
}

impl From<&EdgeRecord> for Triplet {
    fn from(e: &EdgeRecord) -> Self {
        Triplet { subject: e.subject, object: e.object, predicate: e.predicate }
    }
}

/// Deduplicated predictions in descending score order; ties go to the
/// smaller subject, then object, then predicate.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RankedTriplets {
    items: Vec<ScoredTriplet>,
}

fn rank_order(a: &ScoredTriplet, b: &ScoredTriplet) -> Ordering {
    b.score.total_cmp(&a.score).then(a.subject.cmp(&b.subject)).then(a.object.cmp(&b.object)).then(a.predicate.cmp(&b.predicate))
}

impl RankedTriplets {
    pub fn new(triplets: impl IntoIterator<Item = ScoredTriplet>) -> Result<Self> {
        let mut best: HashMap<Triplet, ScoredTriplet> = HashMap::new();
        for t in triplets {
            if !t.score.is_finite() {
                return Err(Error::Config(format!("non-finite score for {}->{} ({})", t.subject, t.object, t.predicate)));
            }
            best.entry(Triplet::from(&t))
                .and_modify(|cur| {
                    if t.score > cur.score {
                        *cur = t;
                    }
                })
                .or_insert(t);
        }
        let mut items: Vec<ScoredTriplet> = best.into_values().collect();
        items.sort_by(rank_order);
        Ok(Self { items })
    }

    pub fn as_slice(&self) -> &[ScoredTriplet] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn top_k(&self, k: usize) -> impl Iterator<Item = Triplet> + '_ {
        self.items.iter().take(k).map(Triplet::from)
    }
}

/// Directed labeled edges of one scene with each edge's reverse partner.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthGraph {
    pub node_labels: BTreeMap<usize, usize>,
    pub edges: Vec<Triplet>,
    partner: Vec<Option<usize>>,
}

impl GroundTruthGraph {
    pub fn new(node_labels: BTreeMap<usize, usize>, edges: Vec<Triplet>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, e) in edges.iter().enumerate() {
            if index.insert((e.subject, e.object), i).is_some() {
                return Err(Error::Graph(format!("more than one ground-truth edge {}->{}", e.subject, e.object)));
            }
        }
        let partner = edges.iter().map(|e| index.get(&(e.object, e.subject)).copied()).collect();
        Ok(Self { node_labels, edges, partner })
    }

    /// Relationship edges of a scene; predicate 0 edges are dropped.
    pub fn from_scene(scene: &SceneRecord) -> Result<Self> {
        let labels = scene.nodes.iter().map(|n| (n.id, n.label)).collect();
        let edges = scene.edges.iter().filter(|e| e.predicate != 0).map(Triplet::from).collect();
        Self::new(labels, edges)
    }

    pub fn partner(&self, edge: usize) -> Option<usize> {
        self.partner[edge]
    }

    /// Bidirectional pairs as `(i, j)` edge indices with `i < j`.
    pub fn br_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.edges.len()).filter_map(|i| self.partner[i].filter(|&j| i < j).map(|j| (i, j))).collect()
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        Err(Error::Config("k must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// Share of ground-truth triplets found among the top `k` predictions.
pub fn recall_at_k(pred: &RankedTriplets, gt: &GroundTruthGraph, k: usize) -> Result<f64> {
    check_k(k)?;
    if gt.edges.is_empty() {
        return Err(Error::Undefined("recall over an empty ground truth".into()));
    }
    let top: HashSet<Triplet> = pred.top_k(k).collect();
    let hits = gt.edges.iter().filter(|t| top.contains(t)).count();
    Ok(hits as f64 / gt.edges.len() as f64)
}

/// Per-category recall averaged over the scenes containing that category,
/// then averaged over categories with equal weight.
pub fn mean_recall_at_k(preds: &[RankedTriplets], gts: &[GroundTruthGraph], k: usize) -> Result<f64> {
    check_k(k)?;
    if preds.len() != gts.len() {
        return Err(Error::Config(format!("{} predictions for {} scenes", preds.len(), gts.len())));
    }
    let mut per_cat: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (pred, gt) in preds.iter().zip(gts) {
        let top: HashSet<Triplet> = pred.top_k(k).collect();
        let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for t in &gt.edges {
            let c = counts.entry(t.predicate).or_default();
            c.1 += 1;
            c.0 += usize::from(top.contains(t));
        }
        for (cat, (hit, total)) in counts {
            let e = per_cat.entry(cat).or_default();
            e.0 += hit as f64 / total as f64;
            e.1 += 1;
        }
    }
    if per_cat.is_empty() {
        return Err(Error::Undefined("mean recall with no ground-truth predicates".into()));
    }
    Ok(per_cat.values().map(|(s, n)| s / *n as f64).sum::<f64>() / per_cat.len() as f64)
}

/// Share of bidirectional pairs whose two directed triplets both appear
/// among the top `k` predictions.
pub fn pairwise_recall_at_k(pred: &RankedTriplets, gt: &GroundTruthGraph, k: usize) -> Result<f64> {
    check_k(k)?;
    let pairs = gt.br_pairs();
    if pairs.is_empty() {
        return Err(Error::Undefined("pairwise recall without bidirectional pairs".into()));
    }
    let top: HashSet<Triplet> = pred.top_k(k).collect();
    let hits = pairs.iter().filter(|(i, j)| top.contains(&gt.edges[*i]) && top.contains(&gt.edges[*j])).count();
    Ok(hits as f64 / pairs.len() as f64)
}

/// Bidirectional pairs as `(i, j)` edge indices.
pub type EdgePairs = Vec<(usize, usize)>;

/// Bidirectional pairs split into `(asymmetric, symmetric)` by whether the
/// two directions carry different predicates.
pub fn brc_split(gt: &GroundTruthGraph) -> (EdgePairs, EdgePairs) {
    gt.br_pairs().into_iter().partition(|&(i, j)| gt.edges[i].predicate != gt.edges[j].predicate)
}

/// How edge probabilities become triplets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TripletMode {
    /// One triplet per edge: its most likely non-background predicate.
    #[default]
    Constrained,
    /// Every non-background predicate of every edge.
    Unconstrained,
}

/// Turns per-edge predicate distributions into scored triplets. Column 0
/// is the no-relation class and never emitted.
pub fn triplets_from_probs(edges: &[(usize, usize)], probs: &Matrix, mode: TripletMode) -> Result<Vec<ScoredTriplet>> {
    if probs.rows() != edges.len() {
        return Err(Error::Config(format!("{} probability rows for {} edges", probs.rows(), edges.len())));
    }
    let mut out = Vec::new();
    for (m, &(subject, object)) in edges.iter().enumerate() {
        let row = probs.row(m);
        match mode {
            TripletMode::Constrained => {
                let mut best = None::<(usize, f64)>;
                for (p, &score) in row.iter().enumerate().skip(1) {
                    if best.is_none_or(|(_, s)| score > s) {
                        best = Some((p, score));
                    }
                }
                if let Some((predicate, score)) = best {
                    out.push(ScoredTriplet { subject, object, predicate, score });
                }
            }
            TripletMode::Unconstrained => {
                out.extend(row.iter().enumerate().skip(1).map(|(predicate, &score)| ScoredTriplet { subject, object, predicate, score }));
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "R")]
    Recall,
    #[serde(rename = "mR")]
    MeanRecall,
    #[serde(rename = "pR")]
    PairRecall,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Recall => "R",
            Metric::MeanRecall => "mR",
            Metric::PairRecall => "pR",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMetric {
    pub scene: String,
    pub metric: Metric,
    pub k: usize,
    pub value: f64,
}

/// Per-scene rows and corpus aggregates. R and pR average over scenes for
/// which they are defined; mR follows [`mean_recall_at_k`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub per_scene: Vec<SceneMetric>,
    pub aggregate: BTreeMap<(Metric, usize), f64>,
}

impl Report {
    pub fn get(&self, metric: Metric, k: usize) -> Option<f64> {
        self.aggregate.get(&(metric, k)).copied()
    }
}

pub fn evaluate(
    scene_ids: &[String],
    preds: &[RankedTriplets],
    gts: &[GroundTruthGraph],
    recall_ks: &[usize],
    pair_ks: &[usize],
) -> Result<Report> {
    if preds.len() != gts.len() || scene_ids.len() != gts.len() {
        return Err(Error::Config(format!("{} predictions for {} scenes", preds.len(), gts.len())));
    }
    let mut report = Report::default();
    let mut sums: BTreeMap<(Metric, usize), (f64, usize)> = BTreeMap::new();
    for ((id, pred), gt) in scene_ids.iter().zip(preds).zip(gts) {
        let has_pairs = !gt.br_pairs().is_empty();
        let rows = recall_ks
            .iter()
            .filter(|_| !gt.edges.is_empty())
            .map(|&k| (Metric::Recall, k, recall_at_k(pred, gt, k)))
            .chain(pair_ks.iter().filter(|_| has_pairs).map(|&k| (Metric::PairRecall, k, pairwise_recall_at_k(pred, gt, k))));
        for (metric, k, value) in rows {
            let value = value?;
            let s = sums.entry((metric, k)).or_default();
            s.0 += value;
            s.1 += 1;
            report.per_scene.push(SceneMetric { scene: id.clone(), metric, k, value });
        }
    }
    for ((metric, k), (sum, n)) in sums {
        report.aggregate.insert((metric, k), sum / n as f64);
    }
    let with_edges: Vec<usize> = (0..gts.len()).filter(|&i| !gts[i].edges.is_empty()).collect();
    if !with_edges.is_empty() {
        let p: Vec<RankedTriplets> = with_edges.iter().map(|&i| preds[i].clone()).collect();
        let g: Vec<GroundTruthGraph> = with_edges.iter().map(|&i| gts[i].clone()).collect();
        for &k in recall_ks {
            report.aggregate.insert((Metric::MeanRecall, k), mean_recall_at_k(&p, &g, k)?);
        }
    }
    Ok(report)
}

/// Predicate categories present in a set of ground truths.
pub fn categories(gts: &[GroundTruthGraph]) -> BTreeSet<usize> {
    gts.iter().flat_map(|g| g.edges.iter().map(|t| t.predicate)).collect()
}
