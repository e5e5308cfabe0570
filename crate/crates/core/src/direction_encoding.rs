//! Fusion of refined subject, object, and union features into one edge
//! representation.
//!
//! The direction-sensitive encoder sums a shared MLP over the three
//! orderings in which the subject precedes the object (`SOU`, `SUO`, `USO`).
//! Swapping subject and object maps this set onto its complement
//! (`OSU`, `OUS`, `UOS`), so the two directions of a pair are encoded from
//! disjoint halves of the six arrangements. The baseline fusions used in
//! ablations live here as well.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Linear, LinearVars, Matrix, NumericsError, Parameters, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    Subject,
    Object,
    Union,
}

pub type Arrangement = [Slot; 3];

use Slot::{Object as O, Subject as S, Union as U};

/// Orderings summed by the encoder, in evaluation order.
pub const CONSTRAINED: [Arrangement; 3] = [[S, O, U], [S, U, O], [U, S, O]];

/// Every arrangement of the three slots.
pub fn all_arrangements() -> Vec<Arrangement> {
    vec![[S, O, U], [S, U, O], [O, S, U], [O, U, S], [U, S, O], [U, O, S]]
}

/// Image of an arrangement under the subject/object swap.
pub fn swap_subject_object(a: Arrangement) -> Arrangement {
    a.map(|s| match s {
        S => O,
        O => S,
        U => U,
    })
}

/// Position of `slot` within an arrangement.
pub fn position(a: &Arrangement, slot: Slot) -> usize {
    a.iter().position(|s| *s == slot).expect("arrangements contain every slot")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionVariant {
    /// Union feature only.
    Union,
    /// Single ordered concatenation `[s || o || u]`.
    Concat,
    /// Subject and object fused first, then combined with the union.
    Sequential,
    /// Sum over the constrained arrangements.
    Parallel,
}

impl FusionVariant {
    pub const NAMES: &'static str = "union, concat, sequential, parallel";

    pub fn name(self) -> &'static str {
        match self {
            FusionVariant::Union => "union",
            FusionVariant::Concat => "concat",
            FusionVariant::Sequential => "sequential",
            FusionVariant::Parallel => "parallel",
        }
    }
}

impl fmt::Display for FusionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "union" => Ok(FusionVariant::Union),
            "concat" => Ok(FusionVariant::Concat),
            "sequential" => Ok(FusionVariant::Sequential),
            "parallel" => Ok(FusionVariant::Parallel),
            other => Err(Error::UnknownVariant { kind: "fusion", name: other.to_string(), expected: Self::NAMES }),
        }
    }
}

/// Perceptron with zero or one hidden relu layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Option<Linear>,
    pub out: Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct MlpVars {
    pub hidden: Option<LinearVars>,
    pub out: LinearVars,
}

impl Mlp {
    /// `hidden = 0` builds a single affine map.
    pub fn init<R: Rng + ?Sized>(d_in: usize, hidden: usize, d_out: usize, rng: &mut R) -> Self {
        if hidden == 0 {
            Self { hidden: None, out: Linear::init(d_in, d_out, rng) }
        } else {
            Self { hidden: Some(Linear::init(d_in, hidden, rng)), out: Linear::init(hidden, d_out, rng) }
        }
    }

    pub fn d_in(&self) -> usize {
        self.hidden.as_ref().map_or(self.out.d_in(), Linear::d_in)
    }

    pub fn d_out(&self) -> usize {
        self.out.d_out()
    }
}

impl Parameters for Mlp {
    type Vars = MlpVars;

    fn bind(&self, tape: &mut Tape) -> MlpVars {
        MlpVars { hidden: self.hidden.as_ref().map(|h| h.bind(tape)), out: self.out.bind(tape) }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = Vec::new();
        if let Some(h) = &mut self.hidden {
            v.extend(h.tensors_mut());
        }
        v.extend(self.out.tensors_mut());
        v
    }

    fn vars(b: &MlpVars) -> Vec<Var> {
        let mut v = Vec::new();
        if let Some(h) = &b.hidden {
            v.extend(Linear::vars(h));
        }
        v.extend(Linear::vars(&b.out));
        v
    }
}

impl MlpVars {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var, NumericsError> {
        let x = match &self.hidden {
            Some(h) => {
                let a = h.apply(tape, x)?;
                tape.relu(a)?
            }
            None => x,
        };
        self.out.apply(tape, x)
    }
}

/// Parameters of one fusion variant. `pair` is used only by the
/// sequential variant to fuse subject and object first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub variant: FusionVariant,
    pub psi: Mlp,
    pub pair: Option<Mlp>,
}

#[derive(Clone, Copy, Debug)]
pub struct FusionVars {
    pub variant: FusionVariant,
    pub psi: MlpVars,
    pub pair: Option<MlpVars>,
}

impl FusionParams {
    /// Fresh parameters mapping `dim`-wide instances to `edge_dim`-wide edges.
    pub fn init<R: Rng + ?Sized>(variant: FusionVariant, dim: usize, hidden: usize, edge_dim: usize, rng: &mut R) -> Self {
        match variant {
            FusionVariant::Union => Self { variant, psi: Mlp::init(dim, hidden, edge_dim, rng), pair: None },
            FusionVariant::Concat | FusionVariant::Parallel => Self { variant, psi: Mlp::init(3 * dim, hidden, edge_dim, rng), pair: None },
            FusionVariant::Sequential => {
                let pair = Mlp::init(2 * dim, hidden, dim, rng);
                Self { variant, psi: Mlp::init(2 * dim, hidden, edge_dim, rng), pair: Some(pair) }
            }
        }
    }

    /// Width of the instance features this fusion consumes.
    pub fn instance_dim(&self) -> usize {
        match self.variant {
            FusionVariant::Union => self.psi.d_in(),
            FusionVariant::Concat | FusionVariant::Parallel => self.psi.d_in() / 3,
            FusionVariant::Sequential => self.psi.d_in() / 2,
        }
    }

    pub fn edge_dim(&self) -> usize {
        self.psi.d_out()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.variant {
            FusionVariant::Union | FusionVariant::Concat | FusionVariant::Parallel => self.pair.is_none(),
            FusionVariant::Sequential => {
                self.pair.as_ref().is_some_and(|p| p.d_in() == self.psi.d_in() && p.d_out() * 2 == self.psi.d_in())
            }
        };
        let divisible = match self.variant {
            FusionVariant::Concat | FusionVariant::Parallel => self.psi.d_in().is_multiple_of(3),
            FusionVariant::Sequential => self.psi.d_in().is_multiple_of(2),
            FusionVariant::Union => true,
        };
        if ok && divisible {
            Ok(())
        } else {
            Err(Error::Config(format!("parameters do not fit the {} fusion variant", self.variant)))
        }
    }
}

impl Parameters for FusionParams {
    type Vars = FusionVars;

    fn bind(&self, tape: &mut Tape) -> FusionVars {
        FusionVars { variant: self.variant, psi: self.psi.bind(tape), pair: self.pair.as_ref().map(|p| p.bind(tape)) }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = self.psi.tensors_mut();
        if let Some(p) = &mut self.pair {
            v.extend(p.tensors_mut());
        }
        v
    }

    fn vars(b: &FusionVars) -> Vec<Var> {
        let mut v = Mlp::vars(&b.psi);
        if let Some(p) = &b.pair {
            v.extend(Mlp::vars(p));
        }
        v
    }
}

/// Batched fusion: each input is `M×D`, the result `M×D_e`.
pub fn fuse_tape(tape: &mut Tape, p: &FusionVars, z: [Var; 3]) -> Result<Var, NumericsError> {
    let [zs, zo, zu] = z;
    match p.variant {
        FusionVariant::Union => p.psi.apply(tape, zu),
        FusionVariant::Concat => {
            let cat = tape.concat_cols(&[zs, zo, zu])?;
            p.psi.apply(tape, cat)
        }
        FusionVariant::Parallel => {
            let mut acc: Option<Var> = None;
            for arrangement in CONSTRAINED {
                let parts = arrangement.map(|s| match s {
                    S => zs,
                    O => zo,
                    U => zu,
                });
                let cat = tape.concat_cols(&parts)?;
                let term = p.psi.apply(tape, cat)?;
                acc = Some(match acc {
                    None => term,
                    Some(prev) => tape.add(prev, term)?,
                });
            }
            Ok(acc.expect("three arrangements"))
        }
        FusionVariant::Sequential => {
            let pair = p.pair.as_ref().expect("sequential fusion binds a pair map");
            let so = tape.concat_cols(&[zs, zo])?;
            let h = pair.apply(tape, so)?;
            let first = tape.concat_cols(&[h, zu])?;
            let second = tape.concat_cols(&[zu, h])?;
            let a = p.psi.apply(tape, first)?;
            let b = p.psi.apply(tape, second)?;
            tape.add(a, b)
        }
    }
}

fn encode_single(zs: &[f64], zo: &[f64], zu: &[f64], p: &FusionParams) -> Result<Vec<f64>> {
    p.validate()?;
    let d = p.instance_dim();
    if zs.len() != d || zo.len() != d || zu.len() != d {
        return Err(Error::Numerics(NumericsError::Shape {
            op: "fusion",
            left: crate::numerics::Shape(1, zs.len()),
            right: crate::numerics::Shape(1, d),
        }));
    }
    let mut tape = Tape::new();
    let vars = p.bind(&mut tape);
    let inputs = [zs, zo, zu].map(|z| tape.constant(Matrix::row_vector(z)));
    let e = fuse_tape(&mut tape, &vars, inputs)?;
    Ok(tape.value(e).data().to_vec())
}

/// Direction-sensitive encoding of one relation: `Σ ψ([j||k||l])` over the
/// constrained arrangements, evaluated in the order `SOU, SUO, USO`.
pub fn dse_encode(zs: &[f64], zo: &[f64], zu: &[f64], psi: &Mlp) -> Result<Vec<f64>> {
    let p = FusionParams { variant: FusionVariant::Parallel, psi: psi.clone(), pair: None };
    encode_single(zs, zo, zu, &p)
}

/// Any fusion variant on one relation; the parameters must have been built
/// for `variant`.
pub fn dse_encode_baseline(variant: &str, zs: &[f64], zo: &[f64], zu: &[f64], p: &FusionParams) -> Result<Vec<f64>> {
    let variant: FusionVariant = variant.parse()?;
    if variant != p.variant {
        return Err(Error::Config(format!("parameters were built for {} fusion, not {variant}", p.variant)));
    }
    encode_single(zs, zo, zu, p)
}
