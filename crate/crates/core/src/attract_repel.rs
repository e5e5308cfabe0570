//! Per-category reference embeddings and the attract/repel loss that pulls
//! edge embeddings toward their own category's reference and pushes sampled
//! negatives away from it.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cosine, norm, Matrix, NumericsError, Tape, Var};

/// Vectors with a norm at or below this are treated as zero.
const ZERO_NORM: f64 = 1e-12;

/// One reference row per predicate category with its accumulated weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceBank {
    pub refs: Matrix,
    pub counts: Vec<f64>,
    pub seed: u64,
    /// Number of updates applied so far; selects the sampling stream.
    pub step: u64,
}

/// A sampled negative: embedding row `row` repelled from category `category`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Negative {
    pub row: usize,
    pub category: usize,
}

impl ReferenceBank {
    pub fn new(categories: usize, dim: usize, seed: u64) -> Self {
        Self { refs: Matrix::zeros(categories, dim), counts: vec![0.0; categories], seed, step: 0 }
    }

    pub fn categories(&self) -> usize {
        self.refs.rows()
    }

    pub fn dim(&self) -> usize {
        self.refs.cols()
    }

    fn check(&self, embeddings: &Matrix, labels: &[usize]) -> Result<()> {
        if embeddings.rows() != labels.len() {
            return Err(Error::Config(format!("{} embeddings but {} labels", embeddings.rows(), labels.len())));
        }
        if embeddings.rows() > 0 && embeddings.cols() != self.dim() {
            return Err(NumericsError::Shape { op: "reference_bank", left: embeddings.shape(), right: self.refs.shape() }.into());
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= self.categories()) {
            return Err(Error::Label { label, classes: self.categories() });
        }
        Ok(())
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.step);
        rng
    }

    /// For every category present in `labels`, draws as many rows with a
    /// different label as it has positives (fewer if the batch runs out),
    /// uniformly without replacement. Deterministic in `(seed, step)`.
    pub fn sample_negatives(&self, labels: &[usize]) -> Result<Vec<Negative>> {
        if let Some(&label) = labels.iter().find(|&&l| l >= self.categories()) {
            return Err(Error::Label { label, classes: self.categories() });
        }
        let mut rng = self.rng();
        let mut out = Vec::new();
        for m in 0..self.categories() {
            let n_pos = labels.iter().filter(|&&l| l == m).count();
            if n_pos == 0 {
                continue;
            }
            let pool: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != m).collect();
            let k = n_pos.min(pool.len());
            let mut picked: Vec<usize> = sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i]).collect();
            picked.sort_unstable();
            out.extend(picked.into_iter().map(|row| Negative { row, category: m }));
        }
        Ok(out)
    }

    /// Folds positives and the given negatives into the references:
    /// `r = (r·n + Σpos − Σneg) / (n + n_pos + n_neg)`. Categories without
    /// positives are left untouched.
    pub fn update(&mut self, embeddings: &Matrix, labels: &[usize], negatives: &[Negative]) -> Result<()> {
        self.check(embeddings, labels)?;
        for neg in negatives {
            if neg.row >= labels.len() {
                return Err(NumericsError::Index { op: "reference_update", index: neg.row, len: labels.len() }.into());
            }
            if neg.category >= self.categories() {
                return Err(Error::Label { label: neg.category, classes: self.categories() });
            }
        }
        let d = self.dim();
        for m in 0..self.categories() {
            let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == m).collect();
            if pos.is_empty() {
                continue;
            }
            let neg: Vec<usize> = negatives.iter().filter(|n| n.category == m).map(|n| n.row).collect();
            let n_old = self.counts[m];
            let denom = n_old + pos.len() as f64 + neg.len() as f64;
            let mut acc: Vec<f64> = self.refs.row(m).iter().map(|v| v * n_old).collect();
            for &i in &pos {
                for c in 0..d {
                    acc[c] += embeddings[(i, c)];
                }
            }
            for &i in &neg {
                for c in 0..d {
                    acc[c] -= embeddings[(i, c)];
                }
            }
            for (dst, v) in self.refs.row_mut(m).iter_mut().zip(acc) {
                *dst = v / denom;
            }
            self.counts[m] = denom;
        }
        self.step += 1;
        Ok(())
    }
}

/// Samples negatives from the bank's current stream, then applies the update.
/// Returns the new bank and the negatives it used.
pub fn update_references(bank: &ReferenceBank, embeddings: &Matrix, labels: &[usize]) -> Result<(ReferenceBank, Vec<Negative>)> {
    let negatives = bank.sample_negatives(labels)?;
    let mut next = bank.clone();
    next.update(embeddings, labels, &negatives)?;
    Ok((next, negatives))
}

/// Tape handles and bookkeeping for one loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct ArTerms {
    pub loss: Var,
    pub positives: usize,
    pub negatives: usize,
    /// Pairs dropped because the embedding or reference had zero norm.
    pub skipped: usize,
}

/// `Σ_pos (1 − cos(r, e)) + Σ_neg cos(r, e)` with references held constant.
pub fn ar_loss_tape(tape: &mut Tape, bank: &ReferenceBank, embeddings: Var, labels: &[usize], negatives: &[Negative]) -> Result<ArTerms> {
    let e = tape.value(embeddings).clone();
    bank.check(&e, labels)?;
    if let Some(n) = negatives.iter().find(|n| n.row >= labels.len() || n.category >= bank.categories()) {
        return Err(NumericsError::Index { op: "attract_repel_loss", index: n.row, len: labels.len() }.into());
    }
    let usable = |row: usize, cat: usize| norm(e.row(row)) > ZERO_NORM && norm(bank.refs.row(cat)) > ZERO_NORM;

    let mut skipped = 0;
    let mut split = |pairs: &mut dyn Iterator<Item = (usize, usize)>| {
        let mut rows = Vec::new();
        let mut cats = Vec::new();
        for (row, cat) in pairs {
            if usable(row, cat) {
                rows.push(row);
                cats.push(cat);
            } else {
                skipped += 1;
            }
        }
        (rows, cats)
    };
    let (pos_rows, pos_cats) = split(&mut labels.iter().copied().enumerate());
    let (neg_rows, neg_cats) = split(&mut negatives.iter().map(|n| (n.row, n.category)));

    let zero = tape.constant(Matrix::zeros(1, 1));
    let mut loss = zero;
    if !pos_rows.is_empty() {
        let cos = cosines(tape, bank, embeddings, &pos_rows, &pos_cats)?;
        let s = tape.sum(cos)?;
        let neg = tape.scale(s, -1.0)?;
        loss = tape.add_scalar(neg, pos_rows.len() as f64)?;
    }
    if !neg_rows.is_empty() {
        let cos = cosines(tape, bank, embeddings, &neg_rows, &neg_cats)?;
        let s = tape.sum(cos)?;
        loss = tape.add(loss, s)?;
    }
    Ok(ArTerms { loss, positives: pos_rows.len(), negatives: neg_rows.len(), skipped })
}

fn cosines(tape: &mut Tape, bank: &ReferenceBank, e: Var, rows: &[usize], cats: &[usize]) -> Result<Var, NumericsError> {
    let picked = tape.gather_rows(e, rows)?;
    let refs = tape.constant(bank.refs.gather_rows(cats)?);
    tape.row_cosine(picked, refs)
}

/// Loss value plus the number of skipped zero-norm pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArLoss {
    pub value: f64,
    pub skipped: usize,
}

pub fn attract_repel_loss(bank: &ReferenceBank, embeddings: &Matrix, labels: &[usize], negatives: &[Negative]) -> Result<ArLoss> {
    let mut tape = Tape::new();
    let e = tape.constant(embeddings.clone());
    let terms = ar_loss_tape(&mut tape, bank, e, labels, negatives)?;
    Ok(ArLoss { value: tape.scalar(terms.loss), skipped: terms.skipped })
}

/// Mean pairwise cosine within and across categories. Zero-norm rows are
/// left out.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterStats {
    pub intra: f64,
    pub inter: f64,
}

pub fn cluster_stats(embeddings: &Matrix, labels: &[usize]) -> Result<ClusterStats> {
    if embeddings.rows() != labels.len() {
        return Err(Error::Config(format!("{} embeddings but {} labels", embeddings.rows(), labels.len())));
    }
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            let Some(c) = cosine(embeddings.row(i), embeddings.row(j)) else { continue };
            if labels[i] == labels[j] {
                intra += c;
                n_intra += 1;
            } else {
                inter += c;
                n_inter += 1;
            }
        }
    }
    if n_inter == 0 {
        return Err(Error::Undefined("inter-class cosine needs two categories".into()));
    }
    if n_intra == 0 {
        return Err(Error::Undefined("intra-class cosine needs a category with two members".into()));
    }
    Ok(ClusterStats { intra: intra / n_intra as f64, inter: inter / n_inter as f64 })
}
