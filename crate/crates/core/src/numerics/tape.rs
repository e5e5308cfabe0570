//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! Every primitive records its inputs and output value on the tape.
//! [`Tape::backward`] walks the records in exact reverse order and
//! accumulates gradients into each input. Values created with
//! [`Tape::constant`] never receive gradients, and neither does anything
//! computed purely from constants.

use super::matrix::{dot, softmax_rows, Matrix, Shape};
use super::NumericsError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Softmax(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    RowDot(Var, Var),
    MulCol(Var, Var),
    Transpose(Var),
    Sum(Var),
    CrossEntropy(Var, Vec<usize>, Matrix),
    RowCosine(Var, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Softmax(..) => "softmax_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceRows(..) => "slice_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::RowDot(..) => "row_dot",
            Op::MulCol(..) => "mul_col",
            Op::Transpose(..) => "transpose",
            Op::Sum(..) => "sum",
            Op::CrossEntropy(..) => "cross_entropy",
            Op::RowCosine(..) => "row_cosine",
        }
    }
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros if `v` did not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let Shape(r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Matrix {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let Shape(r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable input: gradients flow into it.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Fixed input: excluded from differentiation.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    fn push(&mut self, value: Matrix, op: Op) -> Result<Var, NumericsError> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite { op: op.name() });
        }
        let requires_grad = self.inputs_require_grad(&op);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs_require_grad(&self, op: &Op) -> bool {
        let rg = |v: &Var| self.nodes[v.0].requires_grad;
        match op {
            Op::Leaf => false,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::AddRow(a, b) => rg(a) || rg(b),
            Op::RowDot(a, b) | Op::MulCol(a, b) | Op::RowCosine(a, b) => rg(a) || rg(b),
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::Softmax(a)
            | Op::SliceRows(a, _)
            | Op::SliceCols(a, _)
            | Op::GatherRows(a, _)
            | Op::Transpose(a)
            | Op::Sum(a)
            | Op::CrossEntropy(a, _, _) => rg(a),
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.iter().any(rg),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let v = self.value(a).add(self.value(b))?;
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let v = self.value(a).sub(self.value(b))?;
        self.push(v, Op::Sub(a, b))
    }

    /// Adds the `1×d` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (x, bias) = (self.value(a), self.value(b));
        if bias.rows() != 1 || bias.cols() != x.cols() {
            return Err(NumericsError::shape("add_row", x.shape(), bias.shape()));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(bias.data()) {
                *o += bv;
            }
        }
        self.push(out, Op::AddRow(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, NumericsError> {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var, NumericsError> {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumericsError> {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(v, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var, NumericsError> {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::Softmax(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let mats: Vec<&Matrix> = parts.iter().map(|p| self.value(*p)).collect();
        let v = Matrix::hstack(&mats)?;
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let mats: Vec<&Matrix> = parts.iter().map(|p| self.value(*p)).collect();
        let v = Matrix::vstack(&mats)?;
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let v = self.value(a).slice_rows(start, len)?;
        self.push(v, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let v = self.value(a).slice_cols(start, len)?;
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, NumericsError> {
        let v = self.value(a).gather_rows(idx)?;
        self.push(v, Op::GatherRows(a, idx.to_vec()))
    }

    /// Per-row inner product of two equally shaped matrices, as an `n×1` column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(NumericsError::shape("row_dot", x.shape(), y.shape()));
        }
        let data = (0..x.rows()).map(|r| dot(x.row(r), y.row(r))).collect();
        let v = Matrix::from_vec(x.rows(), 1, data)?;
        self.push(v, Op::RowDot(a, b))
    }

    /// Scales row `r` of `a` by `col[r]`, where `col` is `n×1`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, NumericsError> {
        let (x, c) = (self.value(a), self.value(col));
        if c.cols() != 1 || c.rows() != x.rows() {
            return Err(NumericsError::shape("mul_col", x.shape(), c.shape()));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            let s = c[(r, 0)];
            for o in out.row_mut(r) {
                *o *= s;
            }
        }
        self.push(out, Op::MulCol(a, col))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        let v = Matrix::filled(1, 1, self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    /// Mean cross-entropy of row-wise softmax(`logits`) against `labels`.
    /// An empty batch yields zero.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, NumericsError> {
        let x = self.value(logits);
        if labels.len() != x.rows() {
            return Err(NumericsError::shape("cross_entropy", x.shape(), Shape(labels.len(), 1)));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= x.cols()) {
            return Err(NumericsError::Index { op: "cross_entropy", index: bad, len: x.cols() });
        }
        let probs = softmax_rows(x);
        let mut total = 0.0;
        for (r, &l) in labels.iter().enumerate() {
            // log-softmax computed from logits directly to stay finite
            let row = x.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().fold(0.0, |acc, v| acc + (v - max).exp()).ln() + max;
            total += lse - row[l];
        }
        let n = labels.len();
        let loss = if n == 0 { 0.0 } else { total / n as f64 };
        self.push(Matrix::filled(1, 1, loss), Op::CrossEntropy(logits, labels.to_vec(), probs))
    }

    /// Per-row cosine similarity of two equally shaped matrices (`n×1`).
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(NumericsError::shape("row_cosine", x.shape(), y.shape()));
        }
        let data = (0..x.rows())
            .map(|r| {
                let (u, w) = (x.row(r), y.row(r));
                dot(u, w) / (dot(u, u).sqrt() * dot(w, w).sqrt())
            })
            .collect();
        let v = Matrix::from_vec(x.rows(), 1, data)?;
        self.push(v, Op::RowCosine(a, b))
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        if self.shape(loss) != Shape(1, 1) {
            return Err(NumericsError::NotScalar(self.shape(loss)));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<(), NumericsError> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    let ga = g.matmul_t(self.value(*b))?;
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let gb = self.value(*a).t_matmul(g)?;
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.wants(*b) {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                let ga = self.value(*a).zip_with(g, "relu_grad", |x, gv| if x > 0.0 { gv } else { 0.0 })?;
                self.accumulate(grads, *a, ga);
            }
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                let ga = self.value(*a).zip_with(g, "leaky_relu_grad", |x, gv| if x > 0.0 { gv } else { s * gv })?;
                self.accumulate(grads, *a, ga);
            }
            Op::Softmax(a) => {
                let p = &node.value;
                let mut ga = Matrix::zeros(p.rows(), p.cols());
                for r in 0..p.rows() {
                    let inner = dot(p.row(r), g.row(r));
                    for c in 0..p.cols() {
                        ga[(r, c)] = p[(r, c)] * (g[(r, c)] - inner);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.wants(*p) {
                        self.accumulate(grads, *p, g.slice_cols(offset, w)?);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let h = self.value(*p).rows();
                    if self.wants(*p) {
                        self.accumulate(grads, *p, g.slice_rows(offset, h)?);
                    }
                    offset += h;
                }
            }
            Op::SliceRows(a, start) => {
                let src = self.value(*a);
                let mut ga = Matrix::zeros(src.rows(), src.cols());
                for r in 0..g.rows() {
                    ga.row_mut(start + r).copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SliceCols(a, start) => {
                let src = self.value(*a);
                let mut ga = Matrix::zeros(src.rows(), src.cols());
                for r in 0..g.rows() {
                    ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::GatherRows(a, idx) => {
                let src = self.value(*a);
                let mut ga = Matrix::zeros(src.rows(), src.cols());
                for (r, &i) in idx.iter().enumerate() {
                    for (o, &v) in ga.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::RowDot(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let mut ga = y.clone();
                    for r in 0..ga.rows() {
                        let s = g[(r, 0)];
                        ga.row_mut(r).iter_mut().for_each(|v| *v *= s);
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let mut gb = x.clone();
                    for r in 0..gb.rows() {
                        let s = g[(r, 0)];
                        gb.row_mut(r).iter_mut().for_each(|v| *v *= s);
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::MulCol(a, col) => {
                let (x, c) = (self.value(*a), self.value(*col));
                if self.wants(*a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        let s = c[(r, 0)];
                        ga.row_mut(r).iter_mut().for_each(|v| *v *= s);
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*col) {
                    let data = (0..x.rows()).map(|r| dot(x.row(r), g.row(r))).collect();
                    self.accumulate(grads, *col, Matrix::from_vec(x.rows(), 1, data)?);
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Sum(a) => {
                let Shape(r, c) = self.shape(*a);
                self.accumulate(grads, *a, Matrix::filled(r, c, g[(0, 0)]));
            }
            Op::CrossEntropy(a, labels, probs) => {
                let n = labels.len();
                if n > 0 {
                    let s = g[(0, 0)] / n as f64;
                    let mut ga = probs.clone();
                    for (r, &l) in labels.iter().enumerate() {
                        ga[(r, l)] -= 1.0;
                    }
                    self.accumulate(grads, *a, ga.scale(s));
                }
            }
            Op::RowCosine(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let cos = &node.value;
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                let mut gb = Matrix::zeros(y.rows(), y.cols());
                for r in 0..x.rows() {
                    let (u, w) = (x.row(r), y.row(r));
                    let (nu, nw) = (dot(u, u).sqrt(), dot(w, w).sqrt());
                    let c = cos[(r, 0)];
                    let gr = g[(r, 0)];
                    for k in 0..u.len() {
                        ga[(r, k)] = gr * (w[k] / (nu * nw) - c * u[k] / (nu * nu));
                        gb[(r, k)] = gr * (u[k] / (nu * nw) - c * w[k] / (nw * nw));
                    }
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
        }
        Ok(())
    }
}
