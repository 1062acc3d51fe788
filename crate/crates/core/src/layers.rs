//! Building blocks shared by both views: the relational message-passing
//! layer, small MLPs, and parameter initialisation.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{NodeLabel, SubgraphBatch};
use crate::numeric::{BoundParams, NumericError, ParamStore, Tape, Tensor, Var};

/// Directed message lists of one relation type. Every undirected batch
/// edge contributes two messages (user→item and item→user) that share the
/// edge's attention slot.
#[derive(Clone, Debug)]
pub struct RelationEdges {
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub edge: Arc<[usize]>,
}

/// Index arrays for message passing over a [`SubgraphBatch`], built once
/// per batch and shared by every layer of both views.
#[derive(Clone, Debug)]
pub struct MessageIndex {
    pub n_nodes: usize,
    pub n_edges: usize,
    /// Entry `r - 1` holds relation `r`.
    pub relations: Vec<RelationEdges>,
    pub edge_user: Arc<[usize]>,
    pub edge_item: Arc<[usize]>,
    pub target_user: Arc<[usize]>,
    pub target_item: Arc<[usize]>,
}

impl MessageIndex {
    pub fn new(batch: &SubgraphBatch, n_relations: usize) -> Self {
        let mut src = vec![Vec::new(); n_relations];
        let mut dst = vec![Vec::new(); n_relations];
        let mut edge = vec![Vec::new(); n_relations];
        for (e, x) in batch.edges.iter().enumerate() {
            let r = x.relation - 1;
            src[r].extend([x.user, x.item]);
            dst[r].extend([x.item, x.user]);
            edge[r].extend([e, e]);
        }
        let relations = src
            .into_iter()
            .zip(dst)
            .zip(edge)
            .map(|((s, d), e)| RelationEdges { src: s.into(), dst: d.into(), edge: e.into() })
            .collect();
        MessageIndex {
            n_nodes: batch.n_nodes(),
            n_edges: batch.n_edges(),
            relations,
            edge_user: batch.edges.iter().map(|e| e.user).collect(),
            edge_item: batch.edges.iter().map(|e| e.item).collect(),
            target_user: batch.targets.iter().map(|t| t.user).collect(),
            target_item: batch.targets.iter().map(|t| t.item).collect(),
        }
    }
}

/// One-hot structural labels, `n_nodes × 4`.
pub fn label_features(batch: &SubgraphBatch) -> Tensor {
    let data = batch.labels.iter().flat_map(|l| l.one_hot()).collect();
    Tensor::matrix(batch.n_nodes(), NodeLabel::WIDTH, data).expect("label matrix shape")
}

/// Weights of one relational layer: one matrix per relation plus the
/// self-loop matrix.
#[derive(Clone, Debug)]
pub struct RgcnWeights {
    pub relations: Vec<Var>,
    pub self_loop: Var,
}

impl RgcnWeights {
    pub fn bind(params: &BoundParams, prefix: &str, n_relations: usize) -> Result<Self, NumericError> {
        Ok(RgcnWeights {
            relations: (1..=n_relations)
                .map(|r| params.get(&format!("{prefix}.rel{r}")))
                .collect::<Result<_, _>>()?,
            self_loop: params.get(&format!("{prefix}.self"))?,
        })
    }
}

/// `h'_v = ReLU( Σ_r Σ_{j ∈ N_v^r} α_{vj} W_r h_j + W_0 h_v )`.
///
/// `attention`, when given, is a length-`n_edges` vector; without it every
/// edge weight is 1. The self-loop weight is always 1.
pub fn rgcn_layer(
    tape: &mut Tape,
    index: &MessageIndex,
    h: Var,
    weights: &RgcnWeights,
    attention: Option<Var>,
) -> Result<Var, NumericError> {
    if tape.value(h).rows() != index.n_nodes {
        return Err(NumericError::ShapeMismatch {
            op: "rgcn_layer",
            detail: format!("{} embedding rows for {} nodes", tape.value(h).rows(), index.n_nodes),
        });
    }
    if let Some(a) = attention {
        if tape.value(a).len() != index.n_edges {
            return Err(NumericError::ShapeMismatch {
                op: "rgcn_layer",
                detail: format!("{} attention weights for {} edges", tape.value(a).len(), index.n_edges),
            });
        }
    }
    let mut out = tape.matmul(h, weights.self_loop)?;
    for (rel, w) in index.relations.iter().zip(&weights.relations) {
        if rel.src.is_empty() {
            continue;
        }
        let mut msg = tape.gather_rows(h, rel.src.clone())?;
        if let Some(a) = attention {
            let a_e = tape.gather_rows(a, rel.edge.clone())?;
            msg = tape.mul_rows(msg, a_e)?;
        }
        let agg = tape.scatter_add_rows(msg, rel.dst.clone(), index.n_nodes)?;
        let term = tape.matmul(agg, *w)?;
        out = tape.add(out, term)?;
    }
    Ok(tape.relu(out))
}

/// Two affine maps with a ReLU between them.
#[derive(Clone, Copy, Debug)]
pub struct Mlp2 {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl Mlp2 {
    pub fn bind(params: &BoundParams, prefix: &str) -> Result<Self, NumericError> {
        Ok(Mlp2 {
            w1: params.get(&format!("{prefix}.w1"))?,
            b1: params.get(&format!("{prefix}.b1"))?,
            w2: params.get(&format!("{prefix}.w2"))?,
            b2: params.get(&format!("{prefix}.b2"))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, NumericError> {
        let h = tape.matmul(x, self.w1)?;
        let h = tape.add_row_vector(h, self.b1)?;
        let h = tape.relu(h);
        let o = tape.matmul(h, self.w2)?;
        tape.add_row_vector(o, self.b2)
    }
}

/// Uniform in `±1/√fan_in`.
pub fn init_matrix(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::matrix(fan_in, fan_out, data).expect("init shape")
}

pub fn init_rgcn(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, n_relations: usize, d_in: usize, d_out: usize) {
    for r in 1..=n_relations {
        store.insert(format!("{prefix}.rel{r}"), init_matrix(rng, d_in, d_out), true);
    }
    store.insert(format!("{prefix}.self"), init_matrix(rng, d_in, d_out), true);
}

/// Output-layer initialisation of a two-layer MLP.
#[derive(Clone, Copy, Debug)]
pub enum OutputInit {
    Random,
    /// Zero output weights and a constant bias.
    Constant(f64),
}

pub fn init_mlp2(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    dims: (usize, usize, usize),
    output: OutputInit,
    decay: bool,
) {
    let (d_in, hidden, d_out) = dims;
    store.insert(format!("{prefix}.w1"), init_matrix(rng, d_in, hidden), decay);
    store.insert(format!("{prefix}.b1"), Tensor::zeros(&[hidden]), false);
    let (w2, b2) = match output {
        OutputInit::Random => (init_matrix(rng, hidden, d_out), Tensor::zeros(&[d_out])),
        OutputInit::Constant(c) => (Tensor::zeros(&[hidden, d_out]), Tensor::full(&[d_out], c)),
    };
    store.insert(format!("{prefix}.w2"), w2, decay);
    store.insert(format!("{prefix}.b2"), b2, false);
}
