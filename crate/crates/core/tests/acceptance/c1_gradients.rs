//! Central-difference checks for every tape op, every head and the full loss.

use rand::Rng;
use sgg_core::attract_repel::{ar_loss_tape, ReferenceBank};
use sgg_core::direction_encoding::{fuse_tape, FusionParams, FusionVariant};
use sgg_core::global_interaction::{build_adjacency, graph_tape, GraphParams, GraphVariant};
use sgg_core::local_interaction::{lih_tape, LihParams};
use sgg_core::model::{forward_tape, loss_tape, EntityProposal, ModelConfig, ModelParams, SceneInput};
use sgg_core::numerics::{grad_check, grad_check_params, standard_normal, Matrix, NumericsError, Tape, Var};
use sgg_core::Error;

use crate::common::{project, rng, uniform, Verdict};

const SEEDS: u64 = 20;
const EPS: f64 = 1e-6;
const TOL: f64 = 1e-4;

type Check = fn(u64) -> f64;

fn unary(seed: u64, rows: usize, cols: usize, op: fn(&mut Tape, Var) -> Result<Var, NumericsError>) -> f64 {
    let x = uniform(rows, cols, &mut rng(seed));
    grad_check(&[x], EPS, |t, v| {
        let y = op(t, v[0])?;
        project(t, y, seed)
    })
    .unwrap()
}

fn binary(seed: u64, a: (usize, usize), b: (usize, usize), op: fn(&mut Tape, Var, Var) -> Result<Var, NumericsError>) -> f64 {
    let mut r = rng(seed);
    let x = uniform(a.0, a.1, &mut r);
    let y = uniform(b.0, b.1, &mut r);
    grad_check(&[x, y], EPS, |t, v| {
        let z = op(t, v[0], v[1])?;
        project(t, z, seed)
    })
    .unwrap()
}

fn ops() -> Vec<(&'static str, Check)> {
    vec![
        ("matmul", |s| binary(s, (3, 4), (4, 2), |t, a, b| t.matmul(a, b))),
        ("add", |s| binary(s, (3, 4), (3, 4), |t, a, b| t.add(a, b))),
        ("sub", |s| binary(s, (3, 4), (3, 4), |t, a, b| t.sub(a, b))),
        ("add_row", |s| binary(s, (3, 4), (1, 4), |t, a, b| t.add_row(a, b))),
        ("row_dot", |s| binary(s, (3, 4), (3, 4), |t, a, b| t.row_dot(a, b))),
        ("mul_col", |s| binary(s, (3, 4), (3, 1), |t, a, b| t.mul_col(a, b))),
        ("row_cosine", |s| binary(s, (3, 4), (3, 4), |t, a, b| t.row_cosine(a, b))),
        ("concat_cols", |s| binary(s, (3, 2), (3, 4), |t, a, b| t.concat_cols(&[a, b, a]))),
        ("concat_rows", |s| binary(s, (2, 3), (4, 3), |t, a, b| t.concat_rows(&[b, a]))),
        ("scale", |s| unary(s, 3, 4, |t, a| t.scale(a, -1.7))),
        ("add_scalar", |s| unary(s, 3, 4, |t, a| t.add_scalar(a, 0.3))),
        ("relu", |s| unary(s, 3, 4, |t, a| t.relu(a))),
        ("leaky_relu", |s| unary(s, 3, 4, |t, a| t.leaky_relu(a, 0.2))),
        ("softmax_rows", |s| unary(s, 3, 4, |t, a| t.softmax_rows(a))),
        ("slice_rows", |s| unary(s, 5, 3, |t, a| t.slice_rows(a, 1, 3))),
        ("slice_cols", |s| unary(s, 3, 5, |t, a| t.slice_cols(a, 2, 2))),
        ("gather_rows", |s| unary(s, 4, 3, |t, a| t.gather_rows(a, &[2, 0, 2, 3]))),
        ("transpose", |s| unary(s, 3, 4, |t, a| t.transpose(a))),
        ("sum", |s| unary(s, 3, 4, |t, a| t.sum(a))),
        ("cross_entropy", |s| {
            let mut r = rng(s);
            let labels: Vec<usize> = (0..4).map(|_| r.random_range(0..5)).collect();
            let x = uniform(4, 5, &mut r).scale(3.0);
            grad_check(&[x], EPS, |t, v| t.cross_entropy(v[0], &labels)).unwrap()
        }),
    ]
}

fn lih(seed: u64) -> f64 {
    let mut r = rng(seed);
    let p = LihParams::init(4, 3, &mut r);
    let xs: Vec<Matrix> = (0..3).map(|_| uniform(2, 4, &mut r)).collect();
    grad_check_params(&p, &xs, EPS, |t, v, x| {
        let z = lih_tape(t, v, [x[0], x[1], x[2]])?;
        let all = t.concat_cols(&z)?;
        project(t, all, seed)
    })
    .unwrap()
}

fn fusion(seed: u64, variant: FusionVariant) -> f64 {
    let mut r = rng(seed);
    let p = FusionParams::init(variant, 3, 5, 4, &mut r);
    let xs: Vec<Matrix> = (0..3).map(|_| uniform(2, 3, &mut r)).collect();
    grad_check_params(&p, &xs, EPS, |t, v, x| {
        let e = fuse_tape(t, v, [x[0], x[1], x[2]])?;
        project(t, e, seed)
    })
    .unwrap()
}

fn graph(seed: u64, variant: GraphVariant) -> f64 {
    let mut r = rng(seed);
    let p = GraphParams::init(variant, 3, 2, &mut r);
    let adj = build_adjacency(4, &[(0, 1), (1, 0), (2, 3), (1, 3)]).unwrap();
    let xs = [uniform(4, 3, &mut r), uniform(4, 3, &mut r)];
    grad_check_params(&p, &xs, EPS, |t, v, x| {
        let (n, e) = graph_tape(t, v, &adj, x[0], x[1])?;
        let both = t.concat_rows(&[n, e])?;
        project(t, both, seed)
    })
    .unwrap()
}

fn attract_repel(seed: u64) -> f64 {
    let mut r = rng(seed);
    let labels: Vec<usize> = (0..6).map(|_| r.random_range(0..3)).collect();
    let bank = ReferenceBank { refs: standard_normal(3, 4, &mut r), counts: vec![1.0; 3], seed, step: 0 };
    let negatives = bank.sample_negatives(&labels).unwrap();
    let e = uniform(6, 4, &mut r);
    grad_check(&[e], EPS, |t, v| Ok(ar_loss_tape(t, &bank, v[0], &labels, &negatives).map_err(numerics)?.loss)).unwrap()
}

fn numerics(e: Error) -> NumericsError {
    match e {
        Error::Numerics(n) => n,
        other => panic!("{other}"),
    }
}

fn small_config(seed: u64) -> ModelConfig {
    ModelConfig {
        appearance_dim: 3,
        entity_classes: 4,
        predicate_classes: 3,
        node_dim: 4,
        edge_dim: 4,
        lih_att_dim: 3,
        dse_hidden: 5,
        gih_layers: 2,
        seed,
        ..ModelConfig::default()
    }
}

fn proposals(n: usize, seed: u64) -> Vec<EntityProposal> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let x1 = r.random_range(0.0..0.5);
            let y1 = r.random_range(0.0..0.5);
            EntityProposal {
                a: (0..3).map(|_| r.random_range(-1.0..1.0)).collect(),
                b: [x1, y1, x1 + r.random_range(0.0..0.5), y1 + r.random_range(0.0..0.5)],
                c: (0..4).map(|_| r.random_range(-1.0..1.0)).collect(),
            }
        })
        .collect()
}

fn end_to_end(seed: u64) -> f64 {
    let cfg = small_config(seed);
    let params = ModelParams::init(&cfg).unwrap();
    let edges = [(0, 1), (1, 0), (1, 2), (2, 0), (0, 2)];
    let mut input = SceneInput::from_proposals(&proposals(3, 500 + seed), &edges).unwrap();
    let mut r = rng(900 + seed);
    input.node_labels = (0..3).map(|_| r.random_range(0..4)).collect();
    input.edge_labels = vec![1, 2, 0, 1, 2];
    let bank = ReferenceBank { refs: standard_normal(3, 4, &mut r), counts: vec![1.0; 3], seed, step: 0 };
    let fg: Vec<usize> = input.foreground().iter().map(|&m| input.edge_labels[m]).collect();
    let negatives = bank.sample_negatives(&fg).unwrap();
    grad_check_params(&params, &[], EPS, |t, v, _| {
        let f = forward_tape(t, v, &input)?;
        Ok(loss_tape(t, &f, &input, &bank, &negatives, &cfg).map_err(numerics)?.total)
    })
    .unwrap()
}

pub fn run() -> Verdict {
    let t0 = std::time::Instant::now();
    let mut checks = ops();
    checks.extend::<Vec<(&'static str, Check)>>(vec![
        ("lih", lih),
        ("fusion/union", |s| fusion(s, FusionVariant::Union)),
        ("fusion/concat", |s| fusion(s, FusionVariant::Concat)),
        ("fusion/sequential", |s| fusion(s, FusionVariant::Sequential)),
        ("fusion/parallel", |s| fusion(s, FusionVariant::Parallel)),
        ("gih", |s| graph(s, GraphVariant::Gih)),
        ("gcn", |s| graph(s, GraphVariant::Gcn)),
        ("gat", |s| graph(s, GraphVariant::Gat)),
        ("attract_repel", attract_repel),
        ("end_to_end", end_to_end),
    ]);
    let mut worst = (0.0, "");
    let mut failures = Vec::new();
    for (name, check) in &checks {
        for seed in 0..SEEDS {
            let err = check(seed);
            if err.is_nan() || err >= TOL {
                failures.push(format!("{name}#{seed}={err:.2e}"));
            }
            if err > worst.0 {
                worst = (err, name);
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 60.0;
    let mut detail = format!("{} checks x {SEEDS} seeds, worst rel err {:.2e} ({}), {secs:.1}s of 60s", checks.len(), worst.0, worst.1);
    if !failures.is_empty() {
        detail.push_str(&format!("; over tolerance: {}", failures.join(", ")));
    }
    Verdict::new(1, "gradient suite", pass, detail)
}
