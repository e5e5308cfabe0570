use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sgg_core::numerics::{seeded_rng, Matrix, NumericsError, Tape, Var};

/// Outcome of one criterion.
pub struct Verdict {
    pub id: u32,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub secs: f64,
}

impl Verdict {
    pub fn new(id: u32, name: &'static str, pass: bool, detail: impl Into<String>) -> Self {
        Self { id, name, pass, detail: detail.into(), secs: 0.0 }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {} {}: {} ({:.1}s)", self.id, self.name, self.detail, self.secs)
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    seeded_rng(seed)
}

pub fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// `Σ v ⊙ c` for a fixed random `c`, so every output entry reaches the loss
/// with its own weight.
pub fn project(tape: &mut Tape, v: Var, seed: u64) -> Result<Var, NumericsError> {
    let shape = tape.shape(v);
    let c = tape.constant(uniform(shape.0, shape.1, &mut rng(seed ^ 0x5eed)));
    let d = tape.row_dot(v, c)?;
    tape.sum(d)
}
