//! The full relation model: node initialization, per-relation local
//! attention and fusion, graph-level propagation, and classification heads.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use train::{
    clip_gradients, evaluate_model, loss_tape, predict_scene, total_loss, train, EpochLog, LossTerms, LossValues, Sgd, Trained,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::SceneRecord;
use crate::direction_encoding::{fuse_tape, FusionParams, FusionVariant, FusionVars};
use crate::error::{Error, Result};
use crate::global_interaction::{build_adjacency, graph_tape, BlockAdjacency, GraphParams, GraphVariant, GraphVars};
use crate::local_interaction::{lih_tape, LihParams, LihVars};
use crate::metrics::TripletMode;
use crate::numerics::{seeded_rng, softmax_rows, Linear, LinearVars, Matrix, NumericsError, Parameters, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of the appearance vector; 0 means take it from the corpus.
    pub appearance_dim: usize,
    /// Entity classes including "no object"; 0 means take it from the corpus.
    pub entity_classes: usize,
    /// Predicate classes including "no relation"; 0 means take it from the corpus.
    pub predicate_classes: usize,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub lih: bool,
    pub lih_att_dim: usize,
    pub dse: bool,
    /// Fusion used when `dse` is on; with `dse` off the union instance alone is encoded.
    pub fusion: FusionVariant,
    /// Hidden width of the fusion MLP; 0 means twice `edge_dim`.
    pub dse_hidden: usize,
    pub gih: bool,
    pub graph: GraphVariant,
    pub gih_layers: usize,
    /// Multiplier on the initial propagation weights of the `gih` variant.
    pub gih_init_gain: f64,
    pub ar: bool,
    pub w_ent: f64,
    pub w_pred: f64,
    pub w_ar: f64,
    /// Initial learning rate.
    pub lr: f64,
    /// Epochs after which the learning rate is multiplied by `lr_decay`.
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Largest global gradient norm per step; 0 disables clipping.
    pub clip_norm: f64,
    pub epochs: usize,
    pub seed: u64,
    pub recall_ks: Vec<usize>,
    pub pair_ks: Vec<usize>,
    pub triplets: TripletMode,
    /// Evaluate after every epoch when an evaluation corpus is given.
    pub log_metrics: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            appearance_dim: 0,
            entity_classes: 0,
            predicate_classes: 0,
            node_dim: 32,
            edge_dim: 32,
            lih: true,
            lih_att_dim: 16,
            dse: true,
            fusion: FusionVariant::Parallel,
            dse_hidden: 0,
            gih: true,
            graph: GraphVariant::Gih,
            gih_layers: 4,
            gih_init_gain: 0.1,
            ar: true,
            w_ent: 1.0,
            w_pred: 1.0,
            w_ar: 1.0,
            lr: 1e-3,
            lr_milestones: Vec::new(),
            lr_decay: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            clip_norm: 5.0,
            epochs: 50,
            seed: 0,
            recall_ks: vec![20, 50, 100],
            pair_ks: vec![2, 4, 8, 16],
            triplets: TripletMode::Constrained,
            log_metrics: true,
        }
    }
}

impl ModelConfig {
    /// Every component switched off: union-only encoding, no attention,
    /// no propagation, no attract/repel term.
    pub fn baseline() -> Self {
        Self { lih: false, dse: false, gih: false, ar: false, ..Self::default() }
    }

    pub fn fusion_variant(&self) -> FusionVariant {
        if self.dse {
            self.fusion
        } else {
            FusionVariant::Union
        }
    }

    pub fn effective_w_ar(&self) -> f64 {
        if self.ar {
            self.w_ar
        } else {
            0.0
        }
    }

    /// Learning rate used during `epoch` (counted from 1).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.lr_milestones.iter().filter(|&&m| m < epoch).count();
        self.lr * self.lr_decay.powi(passed as i32)
    }

    pub fn hidden(&self) -> usize {
        if self.dse_hidden == 0 {
            2 * self.edge_dim
        } else {
            self.dse_hidden
        }
    }

    /// Fills unset class counts and widths from a corpus.
    pub fn resolve(&mut self, scenes: &[SceneRecord]) -> Result<()> {
        let first = scenes.iter().flat_map(|s| &s.nodes).next();
        if self.appearance_dim == 0 {
            self.appearance_dim = first.map(|n| n.appearance.len()).unwrap_or(0);
        }
        if self.entity_classes == 0 {
            self.entity_classes = first.map(|n| n.logits.len()).unwrap_or(0);
        }
        if self.predicate_classes == 0 {
            self.predicate_classes = scenes.iter().flat_map(|s| &s.edges).map(|e| e.predicate + 1).max().unwrap_or(0);
        }
        self.validate()?;
        self.check_corpus(scenes)
    }

    /// Checks that a corpus fits this configuration's widths and classes.
    pub fn check_corpus(&self, scenes: &[SceneRecord]) -> Result<()> {
        for s in scenes {
            for n in &s.nodes {
                let scene_err = |reason: String| Error::Scene { scene: s.id.clone(), reason };
                if n.appearance.len() != self.appearance_dim {
                    return Err(scene_err(format!(
                        "node {} appearance width {} differs from the model's {}",
                        n.id,
                        n.appearance.len(),
                        self.appearance_dim
                    )));
                }
                if n.logits.len() != self.entity_classes {
                    return Err(scene_err(format!(
                        "node {} has {} class logits, the model has {} entity classes",
                        n.id,
                        n.logits.len(),
                        self.entity_classes
                    )));
                }
                if n.label >= self.entity_classes {
                    return Err(Error::Label { label: n.label, classes: self.entity_classes });
                }
            }
            if let Some(e) = s.edges.iter().find(|e| e.predicate >= self.predicate_classes) {
                return Err(Error::Label { label: e.predicate, classes: self.predicate_classes });
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.entity_classes < 2 || self.predicate_classes < 2 {
            return bad(format!(
                "need at least 2 entity and 2 predicate classes, got {} and {}",
                self.entity_classes, self.predicate_classes
            ));
        }
        if self.appearance_dim == 0 || self.node_dim == 0 || self.edge_dim == 0 || self.lih_att_dim == 0 {
            return bad("widths must be positive".into());
        }
        if self.gih && self.graph == GraphVariant::Gih {
            if !self.gih_layers.is_multiple_of(2) {
                return bad(format!("gih_layers must be even, got {}", self.gih_layers));
            }
            if self.edge_dim != self.node_dim {
                return bad(format!("gih needs edge_dim == node_dim, got {} and {}", self.edge_dim, self.node_dim));
            }
        }
        if self.recall_ks.iter().chain(&self.pair_ks).any(|&k| k == 0) {
            return bad("recall cutoffs must be at least 1".into());
        }
        for (name, v) in [
            ("gih_init_gain", self.gih_init_gain),
            ("w_ent", self.w_ent),
            ("w_pred", self.w_pred),
            ("w_ar", self.w_ar),
            ("lr", self.lr),
            ("lr_decay", self.lr_decay),
            ("clip_norm", self.clip_norm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("momentum must lie in [0, 1) and weight_decay be nonnegative".into());
        }
        Ok(())
    }
}

/// Detector output for one entity.
#[derive(Clone, Debug, PartialEq)]
pub struct EntityProposal {
    /// Appearance vector.
    pub a: Vec<f64>,
    /// `[x1, y1, x2, y2]` in `[0, 1]`.
    pub b: [f64; 4],
    /// Initial class logits.
    pub c: Vec<f64>,
}

impl EntityProposal {
    fn validate(&self) -> Result<()> {
        let [x1, y1, x2, y2] = self.b;
        if !(self.b.iter().all(|v| (0.0..=1.0).contains(v)) && x1 <= x2 && y1 <= y2) {
            return Err(Error::Config(format!("invalid box {:?}", self.b)));
        }
        Ok(())
    }

    pub fn features(&self) -> Vec<f64> {
        self.a.iter().chain(&self.b).chain(&self.c).copied().collect()
    }
}

/// Union-instance input of a relation: summed appearance (so the input does
/// not depend on which endpoint is the subject) and the tight covering box
/// with its width and height.
pub fn union_features(s: &EntityProposal, o: &EntityProposal) -> Vec<f64> {
    let x1 = s.b[0].min(o.b[0]);
    let y1 = s.b[1].min(o.b[1]);
    let x2 = s.b[2].max(o.b[2]);
    let y2 = s.b[3].max(o.b[3]);
    s.a.iter().zip(&o.a).map(|(p, q)| p + q).chain([x1, y1, x2, y2, x2 - x1, y2 - y1]).collect()
}

/// Precomputed inputs for one scene: candidate edges are every ordered pair
/// of distinct nodes.
#[derive(Clone, Debug)]
pub struct SceneInput {
    pub id: String,
    pub node_ids: Vec<usize>,
    pub node_feats: Matrix,
    pub union_feats: Matrix,
    /// Candidate edges as node positions.
    pub edges: Vec<(usize, usize)>,
    pub node_labels: Vec<usize>,
    /// Ground-truth predicate per candidate edge, 0 when unrelated.
    pub edge_labels: Vec<usize>,
    pub adjacency: BlockAdjacency,
}

impl SceneInput {
    pub fn from_proposals(proposals: &[EntityProposal], edges: &[(usize, usize)]) -> Result<Self> {
        let Some(first) = proposals.first() else {
            return Err(Error::Config("no proposals".into()));
        };
        for (i, p) in proposals.iter().enumerate() {
            p.validate()?;
            if p.a.len() != first.a.len() || p.c.len() != first.c.len() {
                return Err(Error::Config(format!("proposal {i} widths differ from proposal 0")));
            }
        }
        let adjacency = build_adjacency(proposals.len(), edges)?;
        let node_rows: Vec<Vec<f64>> = proposals.iter().map(EntityProposal::features).collect();
        let union_rows: Vec<Vec<f64>> = edges.iter().map(|&(s, o)| union_features(&proposals[s], &proposals[o])).collect();
        let union_width = first.a.len() + 6;
        Ok(Self {
            id: String::new(),
            node_ids: (0..proposals.len()).collect(),
            node_feats: Matrix::from_rows(&node_rows),
            union_feats: if union_rows.is_empty() { Matrix::zeros(0, union_width) } else { Matrix::from_rows(&union_rows) },
            edges: edges.to_vec(),
            node_labels: vec![0; proposals.len()],
            edge_labels: vec![0; edges.len()],
            adjacency,
        })
    }

    pub fn from_scene(scene: &SceneRecord) -> Result<Self> {
        scene.validate()?;
        let proposals: Vec<EntityProposal> =
            scene.nodes.iter().map(|n| EntityProposal { a: n.appearance.clone(), b: n.bbox, c: n.logits.clone() }).collect();
        let n = proposals.len();
        let edges: Vec<(usize, usize)> = (0..n).flat_map(|s| (0..n).filter(move |&o| o != s).map(move |o| (s, o))).collect();
        let mut input = Self::from_proposals(&proposals, &edges)?;
        let idx = scene.node_index();
        let mut label_of = std::collections::HashMap::new();
        for e in &scene.edges {
            label_of.insert((idx[&e.subject], idx[&e.object]), e.predicate);
        }
        input.id = scene.id.clone();
        input.node_ids = scene.nodes.iter().map(|n| n.id).collect();
        input.node_labels = scene.nodes.iter().map(|n| n.label).collect();
        input.edge_labels = edges.iter().map(|p| label_of.get(p).copied().unwrap_or(0)).collect();
        Ok(input)
    }

    /// Candidate edges as node ids.
    pub fn edge_ids(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|&(s, o)| (self.node_ids[s], self.node_ids[o])).collect()
    }

    /// Candidate edges carrying a relationship.
    pub fn foreground(&self) -> Vec<usize> {
        (0..self.edges.len()).filter(|&m| self.edge_labels[m] != 0).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Node initialization map over `[a || b || c]`.
    pub phi: Linear,
    /// Union-instance map over [`union_features`].
    pub union: Linear,
    pub lih: Option<LihParams>,
    pub fusion: FusionParams,
    pub graph: Option<GraphParams>,
    pub node_head: Linear,
    pub edge_head: Linear,
}

#[derive(Clone, Debug)]
pub struct ModelVars {
    pub phi: LinearVars,
    pub union: LinearVars,
    pub lih: Option<LihVars>,
    pub fusion: FusionVars,
    pub graph: Option<GraphVars>,
    pub node_head: LinearVars,
    pub edge_head: LinearVars,
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded_rng(cfg.seed);
        Ok(Self::init_with(cfg, &mut rng))
    }

    pub fn init_with<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.node_dim;
        let phi = Linear::init(cfg.appearance_dim + 4 + cfg.entity_classes, d, rng);
        let union = Linear::init(cfg.appearance_dim + 6, d, rng);
        let lih = cfg.lih.then(|| LihParams::init(d, cfg.lih_att_dim, rng));
        let fusion = FusionParams::init(cfg.fusion_variant(), d, cfg.hidden(), cfg.edge_dim, rng);
        let gain = if cfg.graph == GraphVariant::Gih { cfg.gih_init_gain } else { 1.0 };
        let graph = cfg.gih.then(|| GraphParams::init_scaled(cfg.graph, d, cfg.gih_layers, gain, rng));
        let node_head = Linear::init(d, cfg.entity_classes, rng);
        let edge_head = Linear::init(cfg.edge_dim, cfg.predicate_classes, rng);
        Self { phi, union, lih, fusion, graph, node_head, edge_head }
    }

    /// Every weight and bias set to zero, with the same structure as `init`.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let mut p = Self::init_with(cfg, &mut seeded_rng(0));
        for m in p.tensors_mut() {
            m.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        p
    }

    pub fn entity_classes(&self) -> usize {
        self.node_head.d_out()
    }

    pub fn predicate_classes(&self) -> usize {
        self.edge_head.d_out()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.phi.d_out();
        if let Some(l) = &self.lih {
            l.validate()?;
            if l.dim() != d {
                return Err(Error::Config(format!("lih width {} differs from node width {d}", l.dim())));
            }
        }
        self.fusion.validate()?;
        if self.fusion.instance_dim() != d || self.union.d_out() != d {
            return Err(Error::Config("fusion or union width differs from node width".into()));
        }
        if let Some(g) = &self.graph {
            g.validate()?;
            if !g.layers.is_empty() && g.dim() != d {
                return Err(Error::Config(format!("graph width {} differs from node width {d}", g.dim())));
            }
        }
        if self.node_head.d_in() != d || self.edge_head.d_in() != self.fusion.edge_dim() {
            return Err(Error::Config("classification head widths do not match".into()));
        }
        Ok(())
    }
}

impl Parameters for ModelParams {
    type Vars = ModelVars;

    fn bind(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            phi: self.phi.bind(tape),
            union: self.union.bind(tape),
            lih: self.lih.as_ref().map(|l| l.bind(tape)),
            fusion: self.fusion.bind(tape),
            graph: self.graph.as_ref().map(|g| g.bind(tape)),
            node_head: self.node_head.bind(tape),
            edge_head: self.edge_head.bind(tape),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = self.phi.tensors_mut();
        v.extend(self.union.tensors_mut());
        if let Some(l) = &mut self.lih {
            v.extend(l.tensors_mut());
        }
        v.extend(self.fusion.tensors_mut());
        if let Some(g) = &mut self.graph {
            v.extend(g.tensors_mut());
        }
        v.extend(self.node_head.tensors_mut());
        v.extend(self.edge_head.tensors_mut());
        v
    }

    fn vars(b: &ModelVars) -> Vec<Var> {
        let mut v = Linear::vars(&b.phi);
        v.extend(Linear::vars(&b.union));
        if let Some(l) = &b.lih {
            v.extend(LihParams::vars(l));
        }
        v.extend(FusionParams::vars(&b.fusion));
        if let Some(g) = &b.graph {
            v.extend(GraphParams::vars(g));
        }
        v.extend(Linear::vars(&b.node_head));
        v.extend(Linear::vars(&b.edge_head));
        v
    }
}

/// Tape handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub nodes: Var,
    /// Edge embeddings before graph propagation.
    pub edges_pre: Var,
    /// Edge embeddings after graph propagation.
    pub edges: Var,
    pub node_logits: Var,
    pub edge_logits: Var,
}

/// `x_i = φ([a_i || b_i || c_i])` for every node.
pub fn init_nodes(proposals: &[EntityProposal], phi: &Linear) -> Result<Matrix> {
    let input = SceneInput::from_proposals(proposals, &[])?;
    if input.node_feats.cols() != phi.d_in() {
        return Err(NumericsError::Shape { op: "init_nodes", left: input.node_feats.shape(), right: phi.weight.shape() }.into());
    }
    let mut tape = Tape::new();
    let v = phi.bind(&mut tape);
    let x = tape.constant(input.node_feats);
    let y = v.apply(&mut tape, x)?;
    Ok(tape.value(y).clone())
}

pub fn forward_tape(tape: &mut Tape, p: &ModelVars, input: &SceneInput) -> Result<ForwardVars, NumericsError> {
    let feats = tape.constant(input.node_feats.clone());
    let nodes = p.phi.apply(tape, feats)?;
    let union_in = tape.constant(input.union_feats.clone());
    let u = p.union.apply(tape, union_in)?;
    let subj: Vec<usize> = input.edges.iter().map(|e| e.0).collect();
    let obj: Vec<usize> = input.edges.iter().map(|e| e.1).collect();
    let s = tape.gather_rows(nodes, &subj)?;
    let o = tape.gather_rows(nodes, &obj)?;
    let z = match &p.lih {
        Some(l) => lih_tape(tape, l, [s, o, u])?,
        None => [s, o, u],
    };
    let edges_pre = fuse_tape(tape, &p.fusion, z)?;
    let (nodes_out, edges) = match &p.graph {
        Some(g) => graph_tape(tape, g, &input.adjacency, nodes, edges_pre)?,
        None => (nodes, edges_pre),
    };
    let node_logits = p.node_head.apply(tape, nodes_out)?;
    let edge_logits = p.edge_head.apply(tape, edges)?;
    Ok(ForwardVars { nodes: nodes_out, edges_pre, edges, node_logits, edge_logits })
}

/// Class distributions for nodes and candidate edges.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub node_probs: Matrix,
    pub edge_probs: Matrix,
    /// `(subject, object)` node ids per edge row.
    pub edges: Vec<(usize, usize)>,
    /// Post-propagation edge embeddings.
    pub edge_embeddings: Matrix,
}

pub fn forward_input(params: &ModelParams, input: &SceneInput) -> Result<Prediction> {
    params.validate()?;
    if input.node_feats.cols() != params.phi.d_in() {
        return Err(NumericsError::Shape { op: "forward", left: input.node_feats.shape(), right: params.phi.weight.shape() }.into());
    }
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let f = forward_tape(&mut tape, &vars, input)?;
    Ok(Prediction {
        node_probs: softmax_rows(tape.value(f.node_logits)),
        edge_probs: softmax_rows(tape.value(f.edge_logits)),
        edges: input.edge_ids(),
        edge_embeddings: tape.value(f.edges).clone(),
    })
}

/// Runs the model on proposals with the given candidate edges (positions
/// into `proposals`).
pub fn forward(proposals: &[EntityProposal], edges: &[(usize, usize)], params: &ModelParams) -> Result<Prediction> {
    forward_input(params, &SceneInput::from_proposals(proposals, edges)?)
}
