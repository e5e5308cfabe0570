use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{forward_input, forward_tape, ForwardVars, ModelConfig, ModelParams, Prediction, SceneInput};
use crate::attract_repel::{ar_loss_tape, Negative, ReferenceBank};
use crate::data::SceneRecord;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, triplets_from_probs, GroundTruthGraph, Metric, RankedTriplets, Report, TripletMode};
use crate::numerics::{Matrix, NumericsError, Parameters, Tape, Var};

/// Tape handles of the weighted loss and its parts.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub ent: Var,
    pub pred: Var,
    pub ar: Var,
    pub ar_skipped: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub ent: f64,
    pub pred: f64,
    pub ar: f64,
}

/// `w_ent·CE(nodes) + w_pred·CE(edges) + w_ar·AR(foreground edge embeddings)`.
/// `negatives` index into the foreground edges in candidate order.
pub fn loss_tape(
    tape: &mut Tape,
    f: &ForwardVars,
    input: &SceneInput,
    bank: &ReferenceBank,
    negatives: &[Negative],
    cfg: &ModelConfig,
) -> Result<LossTerms> {
    let ent = tape.cross_entropy(f.node_logits, &input.node_labels)?;
    let pred = tape.cross_entropy(f.edge_logits, &input.edge_labels)?;
    let w_ar = cfg.effective_w_ar();
    let (ar, ar_skipped) = {
        let fg = input.foreground();
        if w_ar > 0.0 && !fg.is_empty() {
            let labels: Vec<usize> = fg.iter().map(|&m| input.edge_labels[m]).collect();
            let emb = tape.gather_rows(f.edges, &fg)?;
            let terms = ar_loss_tape(tape, bank, emb, &labels, negatives)?;
            (terms.loss, terms.skipped)
        } else {
            (tape.constant(Matrix::zeros(1, 1)), 0)
        }
    };
    let a = tape.scale(ent, cfg.w_ent)?;
    let b = tape.scale(pred, cfg.w_pred)?;
    let c = tape.scale(ar, w_ar)?;
    let ab = tape.add(a, b)?;
    let total = tape.add(ab, c)?;
    Ok(LossTerms { total, ent, pred, ar, ar_skipped })
}

/// Loss of one scene against a fixed bank, with negatives drawn from the
/// bank's current sampling stream.
pub fn total_loss(params: &ModelParams, input: &SceneInput, bank: &ReferenceBank, cfg: &ModelConfig) -> Result<LossValues> {
    params.validate()?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let f = forward_tape(&mut tape, &vars, input)?;
    for &l in &input.node_labels {
        if l >= params.entity_classes() {
            return Err(Error::Label { label: l, classes: params.entity_classes() });
        }
    }
    for &l in &input.edge_labels {
        if l >= params.predicate_classes() {
            return Err(Error::Label { label: l, classes: params.predicate_classes() });
        }
    }
    let labels: Vec<usize> = input.foreground().iter().map(|&m| input.edge_labels[m]).collect();
    let negatives = bank.sample_negatives(&labels)?;
    let t = loss_tape(&mut tape, &f, input, bank, &negatives, cfg)?;
    Ok(LossValues { total: tape.scalar(t.total), ent: tape.scalar(t.ent), pred: tape.scalar(t.pred), ar: tape.scalar(t.ar) })
}

/// Stochastic gradient descent with heavy-ball momentum and L2 weight decay:
/// `v = μ·v + (g + λ·θ)`, `θ = θ − η·v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Matrix>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self { lr, momentum, weight_decay, velocity: Vec::new() }
    }

    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &[Matrix]) {
        let tensors = params.tensors_mut();
        assert_eq!(tensors.len(), grads.len(), "one gradient per parameter tensor");
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| Matrix::zeros(g.rows(), g.cols())).collect();
        }
        for ((theta, g), v) in tensors.into_iter().zip(grads).zip(&mut self.velocity) {
            for ((t, &gi), vi) in theta.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vi = self.momentum * *vi + gi + self.weight_decay * *t;
                *t -= self.lr * *vi;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_ent: f64,
    pub l_pred: f64,
    pub l_ar: f64,
    pub l_total: f64,
    /// `(name, value)` pairs such as `("R@20", 0.9)`.
    pub metrics: Vec<(String, f64)>,
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub bank: ReferenceBank,
    pub log: Vec<EpochLog>,
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`.
pub fn clip_gradients(grads: &mut [Matrix], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
}

fn diverged(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::Numerics(NumericsError::NonFinite { .. }) => Error::Diverged { epoch, step },
        other => other,
    }
}

/// Trains from the configuration's seed; one scene per step. When `eval` is
/// given and `cfg.log_metrics` is set, each epoch's log carries metrics on
/// it. `cfg` must already be resolved against the corpus.
pub fn train(cfg: &ModelConfig, scenes: &[SceneRecord], eval: Option<&[SceneRecord]>) -> Result<Trained> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    cfg.check_corpus(scenes)?;
    if let Some(e) = eval {
        cfg.check_corpus(e)?;
    }
    let inputs: Vec<SceneInput> = scenes.iter().map(SceneInput::from_scene).collect::<Result<_>>()?;
    let mut params = ModelParams::init(cfg)?;
    let mut bank = ReferenceBank::new(cfg.predicate_classes, cfg.edge_dim, cfg.seed);
    let mut sgd = Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(1);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let w_ar = cfg.effective_w_ar();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        sgd.lr = cfg.lr_at(epoch);
        let (mut s_ent, mut s_pred, mut s_ar, mut s_total) = (0.0, 0.0, 0.0, 0.0);
        for (step, &i) in order.iter().enumerate() {
            let input = &inputs[i];
            let run = |params: &ModelParams, bank: &mut ReferenceBank| -> Result<(Vec<Matrix>, [f64; 4])> {
                let mut tape = Tape::new();
                let vars = params.bind(&mut tape);
                let f = forward_tape(&mut tape, &vars, input)?;
                let fg = input.foreground();
                let negatives = if w_ar > 0.0 && !fg.is_empty() {
                    let emb = tape.value(f.edges).gather_rows(&fg)?;
                    let labels: Vec<usize> = fg.iter().map(|&m| input.edge_labels[m]).collect();
                    let negs = bank.sample_negatives(&labels)?;
                    bank.update(&emb, &labels, &negs)?;
                    negs
                } else {
                    Vec::new()
                };
                let t = loss_tape(&mut tape, &f, input, bank, &negatives, cfg)?;
                let total = tape.scalar(t.total);
                if !total.is_finite() {
                    return Err(NumericsError::NonFinite { op: "loss" }.into());
                }
                let grads = tape.backward(t.total)?;
                let g = ModelParams::vars(&vars).into_iter().map(|v| grads.get(v)).collect();
                Ok((g, [tape.scalar(t.ent), tape.scalar(t.pred), tape.scalar(t.ar), total]))
            };
            let (mut grads, [ent, pred, ar, total]) = run(&params, &mut bank).map_err(|e| diverged(e, epoch, step))?;
            clip_gradients(&mut grads, cfg.clip_norm);
            sgd.step(&mut params, &grads);
            s_ent += ent;
            s_pred += pred;
            s_ar += ar;
            s_total += total;
        }
        let n = inputs.len() as f64;
        let metrics = match eval {
            Some(e) if cfg.log_metrics => metric_row(&evaluate_model(&params, e, cfg)?, cfg),
            _ => Vec::new(),
        };
        log.push(EpochLog { epoch, l_ent: s_ent / n, l_pred: s_pred / n, l_ar: s_ar / n, l_total: s_total / n, metrics });
    }
    Ok(Trained { config: cfg.clone(), params, bank, log })
}

fn metric_row(report: &Report, cfg: &ModelConfig) -> Vec<(String, f64)> {
    let mut row = Vec::new();
    for (metric, ks) in [(Metric::Recall, &cfg.recall_ks), (Metric::MeanRecall, &cfg.recall_ks), (Metric::PairRecall, &cfg.pair_ks)] {
        for &k in ks {
            if let Some(v) = report.get(metric, k) {
                row.push((format!("{}@{k}", metric.name()), v));
            }
        }
    }
    row
}

/// Forward pass on one scene plus its ranked triplets.
pub fn predict_scene(params: &ModelParams, input: &SceneInput, mode: TripletMode) -> Result<(Prediction, RankedTriplets)> {
    let pred = forward_input(params, input)?;
    let ranked = RankedTriplets::new(triplets_from_probs(&pred.edges, &pred.edge_probs, mode)?)?;
    Ok((pred, ranked))
}

/// Recall metrics of `params` on a corpus at the configured cutoffs.
pub fn evaluate_model(params: &ModelParams, scenes: &[SceneRecord], cfg: &ModelConfig) -> Result<Report> {
    let mut ids = Vec::with_capacity(scenes.len());
    let mut preds = Vec::with_capacity(scenes.len());
    let mut gts = Vec::with_capacity(scenes.len());
    for s in scenes {
        let input = SceneInput::from_scene(s)?;
        let (_, ranked) = predict_scene(params, &input, cfg.triplets)?;
        ids.push(s.id.clone());
        preds.push(ranked);
        gts.push(GroundTruthGraph::from_scene(s)?);
    }
    evaluate(&ids, &preds, &gts, &cfg.recall_ks, &cfg.pair_ks)
}
