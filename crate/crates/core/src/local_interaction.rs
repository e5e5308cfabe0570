//! Non-local attention among the three instances of a candidate relation:
//! subject, object, and their union region.
//!
//! Intensities are an embedded-Gaussian kernel normalized over the three
//! instances, `α_ij = softmax_j(q(x_i)ᵀ k(x_j))`, and each instance is
//! refined as `z_i = f(Σ_j α_ij v(x_j)) + x_i`. No positional term enters,
//! so the head is equivariant to permutations of the three instances.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{Matrix, NumericsError, Parameters, Tape, Var};

/// Subject, object, and union feature vectors of one candidate relation.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceTriple {
    pub subject: Vec<f64>,
    pub object: Vec<f64>,
    pub union: Vec<f64>,
}

impl InstanceTriple {
    pub fn new(subject: Vec<f64>, object: Vec<f64>, union: Vec<f64>) -> Result<Self, NumericsError> {
        let d = subject.len();
        for other in [&object, &union] {
            if other.len() != d {
                return Err(NumericsError::Shape {
                    op: "instance_triple",
                    left: crate::numerics::Shape(1, d),
                    right: crate::numerics::Shape(1, other.len()),
                });
            }
        }
        Ok(Self { subject, object, union })
    }

    pub fn dim(&self) -> usize {
        self.subject.len()
    }

    fn rows(&self) -> [Matrix; 3] {
        [Matrix::row_vector(&self.subject), Matrix::row_vector(&self.object), Matrix::row_vector(&self.union)]
    }
}

/// Query, key, value, and output maps of the head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LihParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_f: Matrix,
}

#[derive(Clone, Copy, Debug)]
pub struct LihVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_f: Var,
}

impl LihParams {
    pub fn init<R: Rng + ?Sized>(dim: usize, att_dim: usize, rng: &mut R) -> Self {
        Self {
            w_q: Matrix::init_uniform(dim, att_dim, dim, rng),
            w_k: Matrix::init_uniform(dim, att_dim, dim, rng),
            w_v: Matrix::init_uniform(dim, att_dim, dim, rng),
            w_f: Matrix::init_uniform(att_dim, dim, att_dim, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn att_dim(&self) -> usize {
        self.w_q.cols()
    }

    pub fn validate(&self) -> Result<(), NumericsError> {
        let (d, a) = (self.dim(), self.att_dim());
        for (name, m, want) in [("lih.w_k", &self.w_k, (d, a)), ("lih.w_v", &self.w_v, (d, a)), ("lih.w_f", &self.w_f, (a, d))] {
            if (m.rows(), m.cols()) != want {
                return Err(NumericsError::Shape { op: name, left: m.shape(), right: crate::numerics::Shape(want.0, want.1) });
            }
        }
        Ok(())
    }
}

impl Parameters for LihParams {
    type Vars = LihVars;

    fn bind(&self, tape: &mut Tape) -> LihVars {
        LihVars {
            w_q: tape.param(self.w_q.clone()),
            w_k: tape.param(self.w_k.clone()),
            w_v: tape.param(self.w_v.clone()),
            w_f: tape.param(self.w_f.clone()),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_f]
    }

    fn vars(b: &LihVars) -> Vec<Var> {
        vec![b.w_q, b.w_k, b.w_v, b.w_f]
    }
}

/// Attention rows for a batch: `alphas[i]` is `M×3` with row `m` holding
/// `α_i·` of relation `m`.
pub fn attention_tape(tape: &mut Tape, p: &LihVars, x: [Var; 3]) -> Result<[Var; 3], NumericsError> {
    let mut q = [x[0]; 3];
    let mut k = [x[0]; 3];
    for i in 0..3 {
        q[i] = tape.matmul(x[i], p.w_q)?;
        k[i] = tape.matmul(x[i], p.w_k)?;
    }
    let mut alphas = [x[0]; 3];
    for i in 0..3 {
        let logits = [tape.row_dot(q[i], k[0])?, tape.row_dot(q[i], k[1])?, tape.row_dot(q[i], k[2])?];
        let stacked = tape.concat_cols(&logits)?;
        alphas[i] = tape.softmax_rows(stacked)?;
    }
    Ok(alphas)
}

/// Batched head over `M` relations; each input is `M×D`.
pub fn lih_tape(tape: &mut Tape, p: &LihVars, x: [Var; 3]) -> Result<[Var; 3], NumericsError> {
    let alphas = attention_tape(tape, p, x)?;
    let v = [tape.matmul(x[0], p.w_v)?, tape.matmul(x[1], p.w_v)?, tape.matmul(x[2], p.w_v)?];
    let mut z = [x[0]; 3];
    for i in 0..3 {
        let mut acc: Option<Var> = None;
        for (j, vj) in v.iter().enumerate() {
            let a = tape.slice_cols(alphas[i], j, 1)?;
            let term = tape.mul_col(*vj, a)?;
            acc = Some(match acc {
                None => term,
                Some(prev) => tape.add(prev, term)?,
            });
        }
        let mixed = acc.expect("three instances");
        let transformed = tape.matmul(mixed, p.w_f)?;
        z[i] = tape.add(transformed, x[i])?;
    }
    Ok(z)
}

/// `3×3` attention intensities of one triple; row `i` sums to one.
pub fn attention_intensities(t: &InstanceTriple, p: &LihParams) -> Result<Matrix, NumericsError> {
    check_dims(t, p)?;
    let mut tape = Tape::new();
    let vars = p.bind(&mut tape);
    let [s, o, u] = t.rows().map(|m| tape.constant(m));
    let alphas = attention_tape(&mut tape, &vars, [s, o, u])?;
    let rows: Vec<&Matrix> = alphas.iter().map(|a| tape.value(*a)).collect();
    Matrix::vstack(&rows)
}

/// Refined `(z_s, z_o, z_u)` of one triple.
pub fn lih_forward(t: &InstanceTriple, p: &LihParams) -> Result<InstanceTriple, NumericsError> {
    check_dims(t, p)?;
    let mut tape = Tape::new();
    let vars = p.bind(&mut tape);
    let [s, o, u] = t.rows().map(|m| tape.constant(m));
    let z = lih_tape(&mut tape, &vars, [s, o, u])?;
    let [zs, zo, zu] = z.map(|v| tape.value(v).data().to_vec());
    Ok(InstanceTriple { subject: zs, object: zo, union: zu })
}

fn check_dims(t: &InstanceTriple, p: &LihParams) -> Result<(), NumericsError> {
    p.validate()?;
    if t.dim() != p.dim() {
        return Err(NumericsError::Shape { op: "lih", left: crate::numerics::Shape(1, t.dim()), right: p.w_q.shape() });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, seeded_rng, softmax_rows, standard_normal};
    use proptest::prelude::*;

    fn random_triple(d: usize, seed: u64) -> InstanceTriple {
        let mut rng = seeded_rng(seed);
        let m = standard_normal(3, d, &mut rng);
        InstanceTriple::new(m.row(0).to_vec(), m.row(1).to_vec(), m.row(2).to_vec()).unwrap()
    }

    /// Straight loops over the definition, sharing no code with the tape path.
    fn dense_reference(t: &InstanceTriple, p: &LihParams) -> [Vec<f64>; 3] {
        let xs = [&t.subject, &t.object, &t.union];
        let embed = |x: &[f64], w: &Matrix| -> Vec<f64> { (0..w.cols()).map(|c| (0..w.rows()).map(|r| x[r] * w[(r, c)]).sum()).collect() };
        let q: Vec<Vec<f64>> = xs.iter().map(|x| embed(x, &p.w_q)).collect();
        let k: Vec<Vec<f64>> = xs.iter().map(|x| embed(x, &p.w_k)).collect();
        let v: Vec<Vec<f64>> = xs.iter().map(|x| embed(x, &p.w_v)).collect();
        let mut out: [Vec<f64>; 3] = Default::default();
        for i in 0..3 {
            let logits: Vec<f64> = (0..3).map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum()).collect();
            let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let tot: f64 = e.iter().sum();
            let mut mixed = vec![0.0; p.att_dim()];
            for j in 0..3 {
                for (m, vj) in mixed.iter_mut().zip(&v[j]) {
                    *m += e[j] / tot * vj;
                }
            }
            let f = embed(&mixed, &p.w_f);
            out[i] = f.iter().zip(xs[i].iter()).map(|(a, b)| a + b).collect();
        }
        out
    }

    #[test]
    fn zero_query_gives_uniform_attention() {
        let mut rng = seeded_rng(3);
        let mut p = LihParams::init(4, 4, &mut rng);
        p.w_q = Matrix::zeros(4, 4);
        let a = attention_intensities(&random_triple(4, 9), &p).unwrap();
        for v in a.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_instances_share_attention_rows() {
        let mut rng = seeded_rng(4);
        let p = LihParams::init(3, 2, &mut rng);
        let x = vec![0.3, -1.2, 0.8];
        let t = InstanceTriple::new(x.clone(), x.clone(), x).unwrap();
        let a = attention_intensities(&t, &p).unwrap();
        assert_eq!(a.row(0), a.row(1));
        assert_eq!(a.row(1), a.row(2));
    }

    #[test]
    fn scalar_features_with_identity_kernels() {
        let p = LihParams { w_q: Matrix::identity(1), w_k: Matrix::identity(1), w_v: Matrix::identity(1), w_f: Matrix::identity(1) };
        let t = InstanceTriple::new(vec![1.0], vec![2.0], vec![3.0]).unwrap();
        let a = attention_intensities(&t, &p).unwrap();
        let want = softmax_rows(&Matrix::from_rows(&[[1.0, 2.0, 3.0]]));
        assert!(a.slice_rows(0, 1).unwrap().max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn zero_output_map_is_identity() {
        let mut rng = seeded_rng(5);
        let mut p = LihParams::init(5, 3, &mut rng);
        p.w_f = Matrix::zeros(3, 5);
        let t = random_triple(5, 11);
        assert_eq!(lih_forward(&t, &p).unwrap(), t);
    }

    #[test]
    fn identical_instances_give_identical_outputs() {
        let mut rng = seeded_rng(6);
        let p = LihParams::init(4, 4, &mut rng);
        let x = vec![0.5, -0.25, 1.5, 0.0];
        let z = lih_forward(&InstanceTriple::new(x.clone(), x.clone(), x).unwrap(), &p).unwrap();
        assert_eq!(z.subject, z.object);
        assert_eq!(z.object, z.union);
    }

    #[test]
    fn matches_dense_reference() {
        for seed in 0..10 {
            let mut rng = seeded_rng(100 + seed);
            let p = LihParams::init(2, 2, &mut rng);
            let t = random_triple(2, 200 + seed);
            let z = lih_forward(&t, &p).unwrap();
            let want = dense_reference(&t, &p);
            for (got, want) in [&z.subject, &z.object, &z.union].iter().zip(want.iter()) {
                for (a, b) in got.iter().zip(want) {
                    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn rejects_mismatched_dims() {
        assert!(InstanceTriple::new(vec![1.0], vec![1.0, 2.0], vec![0.0]).is_err());
        let mut rng = seeded_rng(1);
        let p = LihParams::init(3, 2, &mut rng);
        assert!(lih_forward(&random_triple(4, 1), &p).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let mut rng = seeded_rng(seed);
            let p = LihParams::init(3, 2, &mut rng);
            let x = standard_normal(6, 3, &mut rng);
            let params = vec![p.w_q, p.w_k, p.w_v, p.w_f, x];
            let err = grad_check(&params, 1e-5, |t, v| {
                let vars = LihVars { w_q: v[0], w_k: v[1], w_v: v[2], w_f: v[3] };
                let xs = t.slice_rows(v[4], 0, 2)?;
                let xo = t.slice_rows(v[4], 2, 2)?;
                let xu = t.slice_rows(v[4], 4, 2)?;
                let z = lih_tape(t, &vars, [xs, xo, xu])?;
                let cat = t.concat_cols(&z)?;
                let sq = t.row_dot(cat, cat)?;
                t.sum(sq)
            })
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    proptest! {
        #[test]
        fn attention_rows_are_stochastic(seed in 0u64..500) {
            let mut rng = seeded_rng(seed);
            let p = LihParams::init(4, 3, &mut rng);
            let a = attention_intensities(&random_triple(4, seed + 1), &p).unwrap();
            for r in 0..3 {
                let s: f64 = a.row(r).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn permutation_equivariance(seed in 0u64..300, perm in 0usize..6) {
            const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let pi = PERMS[perm];
            let mut rng = seeded_rng(seed);
            let p = LihParams::init(3, 3, &mut rng);
            let t = random_triple(3, seed + 7);
            let xs = [t.subject.clone(), t.object.clone(), t.union.clone()];
            let permuted = InstanceTriple::new(xs[pi[0]].clone(), xs[pi[1]].clone(), xs[pi[2]].clone()).unwrap();
            let z = lih_forward(&t, &p).unwrap();
            let zp = lih_forward(&permuted, &p).unwrap();
            let zs = [z.subject, z.object, z.union];
            let zps = [zp.subject, zp.object, zp.union];
            for i in 0..3 {
                for (a, b) in zps[i].iter().zip(&zs[pi[i]]) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
