//! First view: relational message passing whose edges are re-weighted by a
//! learned attention in `[0, 1]`, so noisy edges get attenuated.
//!
//! Layer 0 is a plain relational layer over the one-hot node labels. Each
//! later layer scores every edge with an MLP over the concatenated endpoint
//! embeddings of the previous layer, min-max normalises the scores across
//! the whole batch, and uses the result as per-edge message weights. The
//! view's own prediction is the dot product of the final target-user and
//! target-item embeddings.

use rand_chacha::ChaCha8Rng;

use crate::graph::NodeLabel;
use crate::layers::{init_mlp2, init_rgcn, rgcn_layer, Mlp2, MessageIndex, OutputInit, RgcnWeights};
use crate::numeric::{BoundParams, NumericError, ParamStore, Tape, Tensor, Var};

pub const PREFIX: &str = "view1";

/// Shape of the denoising view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenoiseShape {
    pub embedding_dim: usize,
    /// Total relational layers; all but the first are attention-weighted.
    pub layers: usize,
    pub relations: usize,
}

pub fn init_params(store: &mut ParamStore, rng: &mut ChaCha8Rng, shape: &DenoiseShape) {
    let d = shape.embedding_dim;
    for l in 0..shape.layers {
        let d_in = if l == 0 { NodeLabel::WIDTH } else { d };
        init_rgcn(store, rng, &format!("{PREFIX}.rgcn{l}"), shape.relations, d_in, d);
    }
    for l in 1..shape.layers {
        init_mlp2(store, rng, &format!("{PREFIX}.att{l}"), (2 * d, d, 1), OutputInit::Random, true);
    }
}

#[derive(Clone, Debug)]
pub struct DenoiseOutput {
    /// Final node embeddings, `n_nodes × d`.
    pub embeddings: Var,
    /// Raw attention scores per attention layer, one per batch edge.
    pub scores: Vec<Var>,
    /// Normalised attention per attention layer.
    pub attention: Vec<Var>,
    /// One prediction per member subgraph.
    pub predictions: Var,
    /// How many times edge attention was evaluated.
    pub attention_calls: usize,
}

/// `MLP(h_user ∥ h_item)` for every batch edge; one score per undirected
/// edge, used by both message directions.
pub fn edge_attention(tape: &mut Tape, index: &MessageIndex, h: Var, mlp: &Mlp2) -> Result<Var, NumericError> {
    let hu = tape.gather_rows(h, index.edge_user.clone())?;
    let hi = tape.gather_rows(h, index.edge_item.clone())?;
    let x = tape.concat(&[hu, hi], 1)?;
    let s = mlp.forward(tape, x)?;
    tape.reshape(s, &[index.n_edges])
}

/// `α = (s − min s) / (max s − min s)` over all scores; every α is 0.5 when
/// all scores are equal.
pub fn normalize_attention(tape: &mut Tape, scores: Var) -> Result<Var, NumericError> {
    let shape = tape.value(scores).shape().to_vec();
    if tape.value(scores).is_empty() {
        return Err(NumericError::ShapeMismatch { op: "normalize_attention", detail: "no scores".into() });
    }
    let lo = tape.min(scores)?;
    let hi = tape.max(scores)?;
    if tape.value(lo).item() == tape.value(hi).item() {
        return Ok(tape.constant(Tensor::full(&shape, 0.5)));
    }
    let lo_b = tape.broadcast(lo, &shape)?;
    let range = tape.sub(hi, lo)?;
    let range_b = tape.broadcast(range, &shape)?;
    let shifted = tape.sub(scores, lo_b)?;
    tape.div(shifted, range_b)
}

pub fn forward(
    tape: &mut Tape,
    index: &MessageIndex,
    features: Var,
    params: &BoundParams,
    shape: &DenoiseShape,
) -> Result<DenoiseOutput, NumericError> {
    let first = RgcnWeights::bind(params, &format!("{PREFIX}.rgcn0"), shape.relations)?;
    let mut h = rgcn_layer(tape, index, features, &first, None)?;
    let mut scores = Vec::new();
    let mut attention = Vec::new();
    let mut attention_calls = 0;
    for l in 1..shape.layers {
        let weights = RgcnWeights::bind(params, &format!("{PREFIX}.rgcn{l}"), shape.relations)?;
        let alpha = if index.n_edges > 0 {
            let mlp = Mlp2::bind(params, &format!("{PREFIX}.att{l}"))?;
            let s = edge_attention(tape, index, h, &mlp)?;
            attention_calls += 1;
            let a = normalize_attention(tape, s)?;
            scores.push(s);
            attention.push(a);
            Some(a)
        } else {
            None
        };
        h = rgcn_layer(tape, index, h, &weights, alpha)?;
    }
    let hu = tape.gather_rows(h, index.target_user.clone())?;
    let hi = tape.gather_rows(h, index.target_item.clone())?;
    let predictions = tape.dot_rows(hu, hi)?;
    Ok(DenoiseOutput { embeddings: h, scores, attention, predictions, attention_calls })
}
