//! Recall metrics against brute-force enumeration on random instances.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sgg_core::data::ScoredTriplet;
use sgg_core::metrics::{mean_recall_at_k, pairwise_recall_at_k, recall_at_k, GroundTruthGraph, RankedTriplets, Triplet};

use crate::common::{rng, Verdict};

const INSTANCES: u64 = 500;
const MAX_TRIPLETS: usize = 16;
const MAX_PAIRS: usize = 6;

struct Scene {
    gt: Vec<Triplet>,
    preds: Vec<ScoredTriplet>,
}

fn scene(r: &mut ChaCha8Rng) -> Scene {
    let n = r.random_range(3..=6);
    let mut unordered: Vec<(usize, usize)> = (0..n).flat_map(|s| (s + 1..n).map(move |o| (s, o))).collect();
    unordered.shuffle(r);
    let n_pairs = r.random_range(1..=MAX_PAIRS.min(unordered.len()));
    let mut gt = Vec::new();
    for &(s, o) in &unordered[..n_pairs] {
        gt.push(Triplet { subject: s, object: o, predicate: r.random_range(1..5) });
        gt.push(Triplet { subject: o, object: s, predicate: r.random_range(1..5) });
    }
    for &(s, o) in &unordered[n_pairs..] {
        if r.random_bool(0.3) {
            let (s, o) = if r.random_bool(0.5) { (s, o) } else { (o, s) };
            gt.push(Triplet { subject: s, object: o, predicate: r.random_range(1..5) });
        }
    }
    gt.shuffle(r);
    let n_pred = r.random_range(0..=MAX_TRIPLETS);
    let preds = (0..n_pred)
        .map(|_| {
            let t = if r.random_bool(0.6) {
                let mut t = gt[r.random_range(0..gt.len())];
                if r.random_bool(0.3) {
                    t.predicate = r.random_range(1..5);
                }
                t
            } else {
                let s = r.random_range(0..n);
                let o = (s + r.random_range(1..n)) % n;
                Triplet { subject: s, object: o, predicate: r.random_range(1..5) }
            };
            // A coarse score grid produces ties and duplicate triplets.
            let score = r.random_range(1..=6) as f64 / 10.0;
            ScoredTriplet { subject: t.subject, object: t.object, predicate: t.predicate, score }
        })
        .collect();
    Scene { gt, preds }
}

/// Triplets whose best score places them among the first `k`, counting for
/// each candidate how many distinct triplets outrank it.
fn oracle_top(preds: &[ScoredTriplet], k: usize) -> BTreeSet<Triplet> {
    let mut best: BTreeMap<Triplet, f64> = BTreeMap::new();
    for p in preds {
        let t = Triplet { subject: p.subject, object: p.object, predicate: p.predicate };
        let s = best.entry(t).or_insert(f64::NEG_INFINITY);
        *s = s.max(p.score);
    }
    best.iter()
        .filter(|(t, s)| {
            let ahead = best
                .iter()
                .filter(|(u, v)| *v > *s || (*v == *s && (u.subject, u.object, u.predicate) < (t.subject, t.object, t.predicate)))
                .count();
            ahead < k
        })
        .map(|(t, _)| *t)
        .collect()
}

fn oracle_recall(s: &Scene, k: usize) -> f64 {
    let top = oracle_top(&s.preds, k);
    s.gt.iter().filter(|t| top.contains(t)).count() as f64 / s.gt.len() as f64
}

fn oracle_pair_recall(s: &Scene, k: usize) -> f64 {
    let top = oracle_top(&s.preds, k);
    let (mut pairs, mut hits) = (0, 0);
    for i in 0..s.gt.len() {
        for j in i + 1..s.gt.len() {
            let (a, b) = (s.gt[i], s.gt[j]);
            if a.subject == b.object && a.object == b.subject {
                pairs += 1;
                hits += usize::from(top.contains(&a) && top.contains(&b));
            }
        }
    }
    hits as f64 / pairs as f64
}

fn oracle_mean_recall(scenes: &[Scene], k: usize) -> f64 {
    let mut per_cat: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for s in scenes {
        let top = oracle_top(&s.preds, k);
        let cats: BTreeSet<usize> = s.gt.iter().map(|t| t.predicate).collect();
        for c in cats {
            let of_c: Vec<&Triplet> = s.gt.iter().filter(|t| t.predicate == c).collect();
            let hit = of_c.iter().filter(|t| top.contains(t)).count();
            per_cat.entry(c).or_default().push(hit as f64 / of_c.len() as f64);
        }
    }
    let means: Vec<f64> = per_cat.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    means.iter().sum::<f64>() / means.len() as f64
}

pub fn run() -> Verdict {
    let t0 = std::time::Instant::now();
    let mut mismatches = Vec::new();
    let mut compared = 0usize;
    for i in 0..INSTANCES {
        let mut r = rng(10_000 + i);
        let scenes: Vec<Scene> = (0..r.random_range(1..=3)).map(|_| scene(&mut r)).collect();
        let ranked: Vec<RankedTriplets> = scenes.iter().map(|s| RankedTriplets::new(s.preds.clone()).unwrap()).collect();
        let gts: Vec<GroundTruthGraph> = scenes
            .iter()
            .map(|s| {
                let nodes = s.gt.iter().flat_map(|t| [t.subject, t.object]).map(|n| (n, 1)).collect();
                GroundTruthGraph::new(nodes, s.gt.clone()).unwrap()
            })
            .collect();
        for k in 1..=MAX_TRIPLETS + 2 {
            for (s, (p, g)) in scenes.iter().zip(ranked.iter().zip(&gts)) {
                let got = (recall_at_k(p, g, k).unwrap(), pairwise_recall_at_k(p, g, k).unwrap());
                let want = (oracle_recall(s, k), oracle_pair_recall(s, k));
                compared += 2;
                if got != want {
                    mismatches.push(format!("instance {i} k={k}: R/pR {got:?} vs {want:?}"));
                }
            }
            let got = mean_recall_at_k(&ranked, &gts, k).unwrap();
            let want = oracle_mean_recall(&scenes, k);
            compared += 1;
            if got != want {
                mismatches.push(format!("instance {i} k={k}: mR {got} vs {want}"));
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = mismatches.is_empty() && secs < 10.0;
    let mut detail = format!("{INSTANCES} instances, {compared} values, {} mismatches, {secs:.1}s of 10s", mismatches.len());
    if let Some(first) = mismatches.first() {
        detail.push_str(&format!("; first: {first}"));
    }
    Verdict::new(2, "metric oracle", pass, detail)
}
