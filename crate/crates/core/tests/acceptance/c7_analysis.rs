//! Co-occurrence statistics on hand fixtures and guess-curve behaviour on
//! planted-rule corpora.

use sgg_core::analysis::{guess_curve, inter_class_distance, intra_class_variance, Context, CooccurrenceTable, Target};
use sgg_core::data::{generate, generate_split, GeneratorSpec};
use sgg_core::numerics::Matrix;

use crate::common::Verdict;

const SLACK: f64 = 0.02;

fn fixtures() -> (f64, f64) {
    let table = CooccurrenceTable::from_counts(2, Matrix::from_rows(&[[4.0, 0.0, 0.0, 0.0]])).unwrap();
    let variance = intra_class_variance(&table, 0).unwrap();
    let table = CooccurrenceTable::from_counts(2, Matrix::from_rows(&[[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])).unwrap();
    let distance = inter_class_distance(&table, 0, 1).unwrap();
    (variance, distance)
}

/// Largest drop of `larger` below `smaller` over all k.
fn worst_drop(smaller: &[f64], larger: &[f64]) -> f64 {
    smaller.iter().zip(larger).map(|(s, l)| s - l).fold(f64::NEG_INFINITY, f64::max)
}

pub fn run() -> Verdict {
    let (variance, distance) = fixtures();
    let mut pass = variance == 3.0 && distance == 2.0;
    let mut notes = vec![format!("variance {variance}, distance {distance}")];

    let exact = GeneratorSpec { noise: 0.0, seed: 7, ..GeneratorSpec::default() };
    let (train, eval) = generate_split(&exact, 200).unwrap();
    let curve = guess_curve(&train.scenes, &eval, &[Context::Head, Context::Tail], Target::Edge).unwrap();
    pass &= curve[0] == 1.0;
    notes.push(format!("deterministic {{head, tail}} curve[1] = {}", curve[0]));

    // Corpus statistics read back on the corpus itself, as `analyze` does.
    let corpus = generate(&GeneratorSpec::default()).unwrap().scenes;
    use Context::*;
    let chains: [(Target, &[&[Context]]); 3] = [
        (Target::Edge, &[&[], &[Head], &[Head, Tail], &[Head, Tail, T2h]]),
        (Target::Edge, &[&[], &[Tail], &[Head, Tail]]),
        (Target::Node, &[&[], &[Tail], &[Tail, H2t], &[Tail, H2t, T2h]]),
    ];
    let mut worst = f64::NEG_INFINITY;
    for (target, chain) in chains {
        let curves: Vec<Vec<f64>> = chain.iter().map(|c| guess_curve(&corpus, &corpus, c, target).unwrap()).collect();
        for w in curves.windows(2) {
            worst = worst.max(worst_drop(&w[0], &w[1]));
        }
    }
    pass &= worst <= SLACK;
    notes.push(format!("largest drop when conditioning grows {worst:.4} (slack {SLACK})"));
    Verdict::new(7, "analysis correctness", pass, notes.join(", "))
}
