//! Union-only encoding without propagation cannot tell the two directions
//! of a pair apart.

use sgg_core::data::{generate, pair_asymmetry, GeneratorSpec};
use sgg_core::metrics::Metric;
use sgg_core::model::{evaluate_model, forward_input, train, ModelConfig, ModelParams, SceneInput};

use crate::common::Verdict;

const PAIR_KS: [usize; 6] = [1, 2, 4, 8, 16, 30];

fn blind(lih: bool, seed: u64) -> ModelConfig {
    ModelConfig {
        lih,
        dse: false,
        gih: false,
        node_dim: 16,
        edge_dim: 16,
        lih_att_dim: 8,
        epochs: 3,
        lr: 1e-2,
        seed,
        recall_ks: vec![4],
        pair_ks: PAIR_KS.to_vec(),
        log_metrics: false,
        ..ModelConfig::default()
    }
}

/// Pairs whose two direction rows differ in any bit.
fn differing_rows(params: &ModelParams, input: &SceneInput) -> (usize, usize) {
    let pred = forward_input(params, input).unwrap();
    let row_of = |s: usize, o: usize| input.edges.iter().position(|&e| e == (s, o)).unwrap();
    let (mut pairs, mut differ) = (0, 0);
    for &(s, o) in input.edges.iter().filter(|(s, o)| s < o) {
        pairs += 1;
        let (a, b) = (pred.edge_probs.row(row_of(s, o)), pred.edge_probs.row(row_of(o, s)));
        differ += usize::from(a.iter().zip(b).any(|(x, y)| x.to_bits() != y.to_bits()));
    }
    (pairs, differ)
}

pub fn run() -> Verdict {
    let spec = GeneratorSpec { scenes: 200, asymmetric_fraction: 1.0, noise: 0.0, seed: 3, ..GeneratorSpec::default() };
    let corpus = generate(&spec).unwrap();
    let (n_pairs, n_asym) = pair_asymmetry(&corpus.scenes);
    let mut notes = vec![format!("corpus {n_asym}/{n_pairs} pairs asymmetric")];
    let mut pass = n_pairs > 0 && n_asym == n_pairs;

    let (mut checked, mut differ) = (0, 0);
    let mut worst_pr: f64 = 0.0;
    for (lih, seed) in [(false, 0), (false, 1), (true, 0), (true, 1)] {
        let mut cfg = blind(lih, seed);
        cfg.resolve(&corpus.scenes).unwrap();
        let init = ModelParams::init(&cfg).unwrap();
        let trained = train(&cfg, &corpus.scenes, None).unwrap().params;
        for params in [&init, &trained] {
            for s in &corpus.scenes {
                let (p, d) = differing_rows(params, &SceneInput::from_scene(s).unwrap());
                checked += p;
                differ += d;
            }
        }
        let report = evaluate_model(&trained, &corpus.scenes, &cfg).unwrap();
        for k in PAIR_KS {
            worst_pr = worst_pr.max(report.get(Metric::PairRecall, k).unwrap());
        }
    }
    pass &= differ == 0 && worst_pr == 0.0;
    notes.push(format!("{differ} of {checked} candidate pairs differ in any bit"));
    notes.push(format!("max pR@{PAIR_KS:?} = {worst_pr}"));
    Verdict::new(3, "direction blindness", pass, notes.join(", "))
}
