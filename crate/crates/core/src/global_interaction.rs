//! Message passing over a scene graph where nodes and edges are both rows
//! of one feature matrix.
//!
//! The block adjacency has four quadrants: node-node (pairs joined by any
//! edge), node-edge and edge-node (a node touches the edges it is subject or
//! object of), and edge-edge (an edge is linked to its opposite-direction
//! twin). With self-connections added, layer `l` (counted from 1) computes
//! `relu(Ã G W)` and every even layer adds `G^(l-2)` back as a residual.
//!
//! GCN and GAT baselines propagate over the node-node quadrant only and
//! leave edge rows untouched.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, NumericsError, Parameters, Shape, Tape, Var};

/// Dense `(N+M)×(N+M)` block adjacency and its self-connected form.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockAdjacency {
    n_nodes: usize,
    n_edges: usize,
    a: Matrix,
    a_tilde: Matrix,
}

impl BlockAdjacency {
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    /// `A` without self-connections.
    pub fn raw(&self) -> &Matrix {
        &self.a
    }

    /// `Ã = A + I`.
    pub fn augmented(&self) -> &Matrix {
        &self.a_tilde
    }

    fn quadrant(&self, r0: usize, rows: usize, c0: usize, cols: usize) -> Matrix {
        let mut q = Matrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                q[(r, c)] = self.a[(r0 + r, c0 + c)];
            }
        }
        q
    }

    pub fn node_node(&self) -> Matrix {
        self.quadrant(0, self.n_nodes, 0, self.n_nodes)
    }

    pub fn node_edge(&self) -> Matrix {
        self.quadrant(0, self.n_nodes, self.n_nodes, self.n_edges)
    }

    pub fn edge_node(&self) -> Matrix {
        self.quadrant(self.n_nodes, self.n_edges, 0, self.n_nodes)
    }

    pub fn edge_edge(&self) -> Matrix {
        self.quadrant(self.n_nodes, self.n_edges, self.n_nodes, self.n_edges)
    }

    /// Symmetric-normalized node adjacency `D^{-1/2} (A_nn + I) D^{-1/2}`.
    pub fn normalized_node_adjacency(&self) -> Matrix {
        let mut a = self.node_node();
        for i in 0..self.n_nodes {
            a[(i, i)] += 1.0;
        }
        let deg: Vec<f64> = (0..self.n_nodes).map(|i| a.row(i).iter().sum::<f64>()).collect();
        for i in 0..self.n_nodes {
            for j in 0..self.n_nodes {
                if a[(i, j)] != 0.0 {
                    a[(i, j)] /= (deg[i] * deg[j]).sqrt();
                }
            }
        }
        a
    }

    /// Additive attention mask over `A_nn + I`: zero where connected, a large
    /// negative constant elsewhere.
    pub fn node_attention_mask(&self) -> Matrix {
        let mut m = Matrix::filled(self.n_nodes, self.n_nodes, MASKED);
        for i in 0..self.n_nodes {
            m[(i, i)] = 0.0;
            for j in 0..self.n_nodes {
                if self.a[(i, j)] != 0.0 {
                    m[(i, j)] = 0.0;
                }
            }
        }
        m
    }
}

const MASKED: f64 = -1e30;

/// Builds the block adjacency for `n_nodes` nodes and directed `edges`
/// given as `(subject, object)` node indices.
pub fn build_adjacency(n_nodes: usize, edges: &[(usize, usize)]) -> Result<BlockAdjacency> {
    for (m, &(s, o)) in edges.iter().enumerate() {
        if s >= n_nodes || o >= n_nodes {
            return Err(Error::Graph(format!("edge {m} ({s}->{o}) references a node outside 0..{n_nodes}")));
        }
        if s == o {
            return Err(Error::Graph(format!("edge {m} is a self-loop on node {s}")));
        }
    }
    let n_edges = edges.len();
    let size = n_nodes + n_edges;
    let mut a = Matrix::zeros(size, size);
    for (m, &(s, o)) in edges.iter().enumerate() {
        let e = n_nodes + m;
        a[(s, o)] = 1.0;
        a[(o, s)] = 1.0;
        for node in [s, o] {
            a[(node, e)] = 1.0;
            a[(e, node)] = 1.0;
        }
        for (m2, &(s2, o2)) in edges.iter().enumerate() {
            if s2 == o && o2 == s {
                a[(e, n_nodes + m2)] = 1.0;
            }
        }
    }
    let mut a_tilde = a.clone();
    for i in 0..size {
        a_tilde[(i, i)] += 1.0;
    }
    Ok(BlockAdjacency { n_nodes, n_edges, a, a_tilde })
}

/// Node rows `𝒩` and edge rows `ℰ` sharing width `D`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphState {
    pub nodes: Matrix,
    pub edges: Matrix,
}

impl GraphState {
    pub fn new(nodes: Matrix, edges: Matrix) -> Result<Self> {
        if nodes.cols() != edges.cols() && edges.rows() > 0 && nodes.rows() > 0 {
            return Err(NumericsError::Shape { op: "graph_state", left: nodes.shape(), right: edges.shape() }.into());
        }
        Ok(Self { nodes, edges })
    }

    /// `G = [𝒩; ℰ]`.
    pub fn stacked(&self) -> Matrix {
        Matrix::vstack(&[&self.nodes, &self.edges]).expect("widths checked on construction")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphVariant {
    Gih,
    Gcn,
    Gat,
}

impl GraphVariant {
    pub const NAMES: &'static str = "gih, gcn, gat";
}

impl fmt::Display for GraphVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraphVariant::Gih => "gih",
            GraphVariant::Gcn => "gcn",
            GraphVariant::Gat => "gat",
        })
    }
}

impl FromStr for GraphVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gih" => Ok(GraphVariant::Gih),
            "gcn" => Ok(GraphVariant::Gcn),
            "gat" => Ok(GraphVariant::Gat),
            other => Err(Error::UnknownVariant { kind: "graph head", name: other.to_string(), expected: Self::NAMES }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphLayer {
    pub w: Matrix,
    /// GAT attention vectors (`D×1`); absent for the other variants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub att_src: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub att_dst: Option<Matrix>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    pub variant: GraphVariant,
    pub layers: Vec<GraphLayer>,
}

#[derive(Clone, Debug)]
pub struct GraphVars {
    pub variant: GraphVariant,
    pub w: Vec<Var>,
    pub att: Vec<(Var, Var)>,
}

impl GraphParams {
    pub fn init<R: Rng + ?Sized>(variant: GraphVariant, dim: usize, layers: usize, rng: &mut R) -> Self {
        Self::init_scaled(variant, dim, layers, 1.0, rng)
    }

    /// As [`GraphParams::init`] with the layer weights multiplied by `gain`.
    /// Unnormalized propagation sums over every neighbour, so a gain below
    /// one keeps early activations near the input scale on dense graphs.
    pub fn init_scaled<R: Rng + ?Sized>(variant: GraphVariant, dim: usize, layers: usize, gain: f64, rng: &mut R) -> Self {
        let layers = (0..layers)
            .map(|_| {
                let w = Matrix::init_uniform(dim, dim, dim, rng).scale(gain);
                let (att_src, att_dst) = if variant == GraphVariant::Gat {
                    (Some(Matrix::init_uniform(dim, 1, dim, rng)), Some(Matrix::init_uniform(dim, 1, dim, rng)))
                } else {
                    (None, None)
                };
                GraphLayer { w, att_src, att_dst }
            })
            .collect();
        Self { variant, layers }
    }

    /// Every matrix set to zero.
    pub fn zeros(variant: GraphVariant, dim: usize, layers: usize) -> Self {
        let layers = (0..layers)
            .map(|_| GraphLayer {
                w: Matrix::zeros(dim, dim),
                att_src: (variant == GraphVariant::Gat).then(|| Matrix::zeros(dim, 1)),
                att_dst: (variant == GraphVariant::Gat).then(|| Matrix::zeros(dim, 1)),
            })
            .collect();
        Self { variant, layers }
    }

    pub fn dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.w.rows())
    }

    pub fn validate(&self) -> Result<()> {
        if self.variant == GraphVariant::Gih && !self.layers.len().is_multiple_of(2) {
            return Err(Error::Config(format!("gih needs an even layer count, got {}", self.layers.len())));
        }
        let d = self.dim();
        for (i, l) in self.layers.iter().enumerate() {
            if l.w.shape() != Shape(d, d) {
                return Err(Error::Config(format!("layer {i} weight is {}, expected {d}x{d}", l.w.shape())));
            }
            let needs_att = self.variant == GraphVariant::Gat;
            if l.att_src.is_some() != needs_att || l.att_dst.is_some() != needs_att {
                return Err(Error::Config(format!("layer {i} attention vectors do not fit {}", self.variant)));
            }
        }
        Ok(())
    }
}

impl Parameters for GraphParams {
    type Vars = GraphVars;

    fn bind(&self, tape: &mut Tape) -> GraphVars {
        let mut w = Vec::new();
        let mut att = Vec::new();
        for l in &self.layers {
            w.push(tape.param(l.w.clone()));
            if let (Some(s), Some(d)) = (&l.att_src, &l.att_dst) {
                att.push((tape.param(s.clone()), tape.param(d.clone())));
            }
        }
        GraphVars { variant: self.variant, w, att }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = Vec::new();
        for l in &mut self.layers {
            v.push(&mut l.w);
            if let Some(s) = &mut l.att_src {
                v.push(s);
            }
            if let Some(d) = &mut l.att_dst {
                v.push(d);
            }
        }
        v
    }

    fn vars(b: &GraphVars) -> Vec<Var> {
        let mut v = Vec::new();
        for (i, w) in b.w.iter().enumerate() {
            v.push(*w);
            if let Some((s, d)) = b.att.get(i) {
                v.push(*s);
                v.push(*d);
            }
        }
        v
    }
}

/// Residual node/edge propagation on the stacked matrix `g0`.
pub fn gih_tape(tape: &mut Tape, w: &[Var], a_tilde: Var, g0: Var) -> Result<Var, NumericsError> {
    let mut history = vec![g0];
    for (i, wl) in w.iter().enumerate() {
        let layer = i + 1;
        let prev = *history.last().expect("non-empty");
        let msg = tape.matmul(a_tilde, prev)?;
        let lin = tape.matmul(msg, *wl)?;
        let act = tape.relu(lin)?;
        let next = if layer % 2 == 0 { tape.add(history[layer - 2], act)? } else { act };
        history.push(next);
    }
    Ok(*history.last().expect("non-empty"))
}

/// Stacked GCN layers `relu(Â H W)` over node rows.
pub fn gcn_tape(tape: &mut Tape, w: &[Var], norm_adj: Var, nodes: Var) -> Result<Var, NumericsError> {
    let mut h = nodes;
    for wl in w {
        let msg = tape.matmul(norm_adj, h)?;
        let lin = tape.matmul(msg, *wl)?;
        h = tape.relu(lin)?;
    }
    Ok(h)
}

/// Stacked single-head GAT layers over node rows; `mask` is the additive
/// neighborhood mask.
pub fn gat_tape(tape: &mut Tape, w: &[Var], att: &[(Var, Var)], mask: Var, nodes: Var) -> Result<Var, NumericsError> {
    let n = tape.shape(nodes).0;
    let ones_row = tape.constant(Matrix::filled(1, n, 1.0));
    let ones_col = tape.constant(Matrix::filled(n, 1, 1.0));
    let mut h = nodes;
    for (wl, (a_src, a_dst)) in w.iter().zip(att) {
        let hw = tape.matmul(h, *wl)?;
        let s = tape.matmul(hw, *a_src)?;
        let t = tape.matmul(hw, *a_dst)?;
        let s_b = tape.matmul(s, ones_row)?;
        let t_t = tape.transpose(t)?;
        let t_b = tape.matmul(ones_col, t_t)?;
        let logits = tape.add(s_b, t_b)?;
        let logits = tape.leaky_relu(logits, 0.2)?;
        let logits = tape.add(logits, mask)?;
        let alpha = tape.softmax_rows(logits)?;
        let agg = tape.matmul(alpha, hw)?;
        h = tape.relu(agg)?;
    }
    Ok(h)
}

/// Runs the configured graph head; returns updated `(nodes, edges)` vars.
pub fn graph_tape(tape: &mut Tape, p: &GraphVars, adj: &BlockAdjacency, nodes: Var, edges: Var) -> Result<(Var, Var), NumericsError> {
    let n = adj.n_nodes();
    let m = adj.n_edges();
    match p.variant {
        GraphVariant::Gih => {
            let a = tape.constant(adj.augmented().clone());
            let g0 = tape.concat_rows(&[nodes, edges])?;
            let g = gih_tape(tape, &p.w, a, g0)?;
            let nodes_out = tape.slice_rows(g, 0, n)?;
            let edges_out = tape.slice_rows(g, n, m)?;
            Ok((nodes_out, edges_out))
        }
        GraphVariant::Gcn => {
            let a = tape.constant(adj.normalized_node_adjacency());
            Ok((gcn_tape(tape, &p.w, a, nodes)?, edges))
        }
        GraphVariant::Gat => {
            let mask = tape.constant(adj.node_attention_mask());
            Ok((gat_tape(tape, &p.w, &p.att, mask, nodes)?, edges))
        }
    }
}

fn run(state: &GraphState, adj: &BlockAdjacency, p: &GraphParams) -> Result<GraphState> {
    p.validate()?;
    if state.nodes.rows() != adj.n_nodes() || state.edges.rows() != adj.n_edges() {
        return Err(NumericsError::Shape {
            op: "graph_head",
            left: Shape(state.nodes.rows() + state.edges.rows(), state.nodes.cols()),
            right: adj.augmented().shape(),
        }
        .into());
    }
    if !p.layers.is_empty() && state.nodes.cols() != p.dim() {
        return Err(NumericsError::Shape { op: "graph_head", left: state.nodes.shape(), right: p.layers[0].w.shape() }.into());
    }
    let mut tape = Tape::new();
    let vars = p.bind(&mut tape);
    let nodes = tape.constant(state.nodes.clone());
    let edges = tape.constant(state.edges.clone());
    let (n, e) = graph_tape(&mut tape, &vars, adj, nodes, edges)?;
    Ok(GraphState { nodes: tape.value(n).clone(), edges: tape.value(e).clone() })
}

/// Residual node-and-edge propagation; `p.variant` must be `Gih`.
pub fn gih_forward(state: &GraphState, adj: &BlockAdjacency, p: &GraphParams) -> Result<GraphState> {
    expect_variant(p, GraphVariant::Gih)?;
    run(state, adj, p)
}

pub fn gcn_forward(state: &GraphState, adj: &BlockAdjacency, p: &GraphParams) -> Result<GraphState> {
    expect_variant(p, GraphVariant::Gcn)?;
    run(state, adj, p)
}

pub fn gat_forward(state: &GraphState, adj: &BlockAdjacency, p: &GraphParams) -> Result<GraphState> {
    expect_variant(p, GraphVariant::Gat)?;
    run(state, adj, p)
}

fn expect_variant(p: &GraphParams, want: GraphVariant) -> Result<()> {
    if p.variant == want {
        Ok(())
    } else {
        Err(Error::Config(format!("expected {want} parameters, got {}", p.variant)))
    }
}
