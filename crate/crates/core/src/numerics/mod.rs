//! Dense matrices, a gradient tape, and the finite-difference checker that
//! every learnable block in this crate is verified against.

mod matrix;
mod tape;

pub use matrix::{cosine, dot, norm, softmax_rows, Matrix, Shape};
pub use tape::{Gradients, Tape, Var};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("{op}: incompatible shapes {left} and {right}")]
    Shape { op: &'static str, left: Shape, right: Shape },
    #[error("data length {len} does not match shape {shape}")]
    DataLength { shape: Shape, len: usize },
    #[error("{op}: index {index} out of range for length {len}")]
    Index { op: &'static str, index: usize, len: usize },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward requires a 1x1 loss, got {0}")]
    NotScalar(Shape),
    #[error("finite-difference step {0} outside [1e-7, 1e-4]")]
    InvalidStep(f64),
}

impl NumericsError {
    pub(crate) fn shape(op: &'static str, left: Shape, right: Shape) -> Self {
        NumericsError::Shape { op, left, right }
    }
}

/// Deterministic generator used for every seeded draw in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Matrix of independent N(0, 1) draws.
pub fn standard_normal<R: rand::Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("length matches by construction")
}

/// `y = x·w (+ b)` with `b` broadcast over rows.
pub fn linear_map(x: &Matrix, w: &Matrix, b: Option<&Matrix>) -> Result<Matrix, NumericsError> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.constant(w.clone());
    let bv = b.map(|b| tape.constant(b.clone()));
    let y = linear(&mut tape, xv, wv, bv)?;
    Ok(tape.value(y).clone())
}

/// Tape form of [`linear_map`].
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Option<Var>) -> Result<Var, NumericsError> {
    let y = tape.matmul(x, w)?;
    match b {
        Some(b) => tape.add_row(y, b),
        None => Ok(y),
    }
}

/// Affine layer parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn init<R: rand::Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Self { weight: Matrix::init_uniform(d_in, d_out, d_in, rng), bias: Matrix::init_uniform(1, d_out, d_in, rng) }
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self { weight: Matrix::zeros(d_in, d_out), bias: Matrix::zeros(1, d_out) }
    }

    pub fn d_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.cols()
    }

    pub fn bind(&self, tape: &mut Tape) -> LinearVars {
        LinearVars { weight: tape.param(self.weight.clone()), bias: tape.param(self.bias.clone()) }
    }
}

impl LinearVars {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var, NumericsError> {
        linear(tape, x, self.weight, Some(self.bias))
    }
}

/// Ordered access to every trainable matrix of a parameter struct, paired
/// with the tape handles produced by binding it. Both orders must agree.
pub trait Parameters {
    type Vars;
    fn bind(&self, tape: &mut Tape) -> Self::Vars;
    fn tensors_mut(&mut self) -> Vec<&mut Matrix>;
    fn vars(bound: &Self::Vars) -> Vec<Var>;
}

impl Parameters for Linear {
    type Vars = LinearVars;
    fn bind(&self, tape: &mut Tape) -> LinearVars {
        Linear::bind(self, tape)
    }
    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.weight, &mut self.bias]
    }
    fn vars(bound: &LinearVars) -> Vec<Var> {
        vec![bound.weight, bound.bias]
    }
}

/// Compares tape gradients of a scalar composite against central
/// differences. Returns the largest `|analytic - numeric| / max(1, |numeric|)`
/// over every entry of every parameter.
pub fn grad_check<F>(params: &[Matrix], eps: f64, f: F) -> Result<f64, NumericsError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NumericsError>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(NumericsError::InvalidStep(eps));
    }
    let eval = |values: &[Matrix]| -> Result<f64, NumericsError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|m| tape.param(m.clone())).collect();
        let out = f(&mut tape, &vars)?;
        if tape.shape(out) != Shape(1, 1) {
            return Err(NumericsError::NotScalar(tape.shape(out)));
        }
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|m| tape.param(m.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut work: Vec<Matrix> = params.to_vec();
    for (p, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for k in 0..params[p].data().len() {
            let orig = params[p].data()[k];
            work[p].data_mut()[k] = orig + eps;
            let plus = eval(&work)?;
            work[p].data_mut()[k] = orig - eps;
            let minus = eval(&work)?;
            work[p].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (analytic.data()[k] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// [`grad_check`] over a parameter struct plus free inputs. `f` receives the
/// bound parameters and one tape handle per input matrix.
pub fn grad_check_params<P, F>(params: &P, inputs: &[Matrix], eps: f64, f: F) -> Result<f64, NumericsError>
where
    P: Parameters + Clone,
    F: Fn(&mut Tape, &P::Vars, &[Var]) -> Result<Var, NumericsError>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(NumericsError::InvalidStep(eps));
    }
    let eval = |p: &P, xs: &[Matrix]| -> Result<(Tape, Var, P::Vars, Vec<Var>), NumericsError> {
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let vars: Vec<Var> = xs.iter().map(|m| tape.param(m.clone())).collect();
        let out = f(&mut tape, &bound, &vars)?;
        if tape.shape(out) != Shape(1, 1) {
            return Err(NumericsError::NotScalar(tape.shape(out)));
        }
        Ok((tape, out, bound, vars))
    };

    let (tape, out, bound, input_vars) = eval(params, inputs)?;
    let grads = tape.backward(out)?;
    let mut analytic: Vec<Matrix> = P::vars(&bound).into_iter().map(|v| grads.get(v)).collect();
    let n_param_tensors = analytic.len();
    analytic.extend(input_vars.iter().map(|v| grads.get(*v)));

    let mut worst: f64 = 0.0;
    let mut work_p = params.clone();
    let mut work_x = inputs.to_vec();
    for (t, g) in analytic.iter().enumerate() {
        for k in 0..g.data().len() {
            let mut probe = |delta: f64| -> Result<f64, NumericsError> {
                let orig = if t < n_param_tensors {
                    let mut ts = work_p.tensors_mut();
                    let o = ts[t].data()[k];
                    ts[t].data_mut()[k] = o + delta;
                    o
                } else {
                    let o = work_x[t - n_param_tensors].data()[k];
                    work_x[t - n_param_tensors].data_mut()[k] = o + delta;
                    o
                };
                let r = eval(&work_p, &work_x);
                if t < n_param_tensors {
                    work_p.tensors_mut()[t].data_mut()[k] = orig;
                } else {
                    work_x[t - n_param_tensors].data_mut()[k] = orig;
                }
                let (tp, o, _, _) = r?;
                Ok(tp.scalar(o))
            };
            let plus = probe(eps)?;
            let minus = probe(-eps)?;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max((g.data()[k] - numeric).abs() / numeric.abs().max(1.0));
        }
    }
    Ok(worst)
}
