//! Second view: a variational graph autoencoder over the same subgraphs.
//!
//! Stacked relational layers (every edge weight 1) feed two MLP heads that
//! produce the mean and log standard deviation of a Gaussian per node and
//! dimension. Latents are drawn as `Z = μ + ε ⊙ exp(log σ)` and decoded by
//! dot products, both for the removed target edges and for every edge that
//! is still present in the batch.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::graph::NodeLabel;
use crate::layers::{init_mlp2, init_rgcn, rgcn_layer, Mlp2, MessageIndex, OutputInit, RgcnWeights};
use crate::numeric::{BoundParams, NumericError, ParamStore, Tape, Tensor, Var};

pub const PREFIX: &str = "view2";

/// Initial output of the log-σ head; σ starts near e⁻² ≈ 0.135.
pub const INITIAL_LOG_STD: f64 = -2.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VgaeShape {
    pub embedding_dim: usize,
    pub layers: usize,
    pub relations: usize,
}

pub fn init_params(store: &mut ParamStore, rng: &mut ChaCha8Rng, shape: &VgaeShape) {
    let d = shape.embedding_dim;
    for l in 0..shape.layers {
        let d_in = if l == 0 { NodeLabel::WIDTH } else { d };
        init_rgcn(store, rng, &format!("{PREFIX}.rgcn{l}"), shape.relations, d_in, d);
    }
    init_mlp2(store, rng, &format!("{PREFIX}.mean"), (d, d, d), OutputInit::Random, true);
    init_mlp2(store, rng, &format!("{PREFIX}.logstd"), (d, d, d), OutputInit::Constant(INITIAL_LOG_STD), false);
}

/// Source of the reparameterisation noise ε.
pub enum Noise<'a> {
    /// ε = 0: the latent is the mean. Used for evaluation.
    Zero,
    /// ε ~ N(0, 1), drawn per node and per dimension.
    Sample(&'a mut ChaCha8Rng),
    Fixed(Tensor),
}

#[derive(Clone, Debug)]
pub struct VgaeOutput {
    /// Latent embeddings `Z`, `n_nodes × d`.
    pub latent: Var,
    pub mean: Var,
    pub log_std: Var,
    /// The ε used for this pass.
    pub noise: Tensor,
    pub target_predictions: Var,
    /// One reconstruction per batch edge, in batch edge order.
    pub reconstruction_predictions: Var,
}

pub fn encode(
    tape: &mut Tape,
    index: &MessageIndex,
    features: Var,
    params: &BoundParams,
    shape: &VgaeShape,
    noise: Noise<'_>,
) -> Result<VgaeOutput, NumericError> {
    let mut h = features;
    for l in 0..shape.layers {
        let weights = RgcnWeights::bind(params, &format!("{PREFIX}.rgcn{l}"), shape.relations)?;
        h = rgcn_layer(tape, index, h, &weights, None)?;
    }
    let mean = Mlp2::bind(params, &format!("{PREFIX}.mean"))?.forward(tape, h)?;
    let log_std = Mlp2::bind(params, &format!("{PREFIX}.logstd"))?.forward(tape, h)?;
    let dims = tape.value(mean).shape().to_vec();
    let eps = match noise {
        Noise::Zero => Tensor::zeros(&dims),
        Noise::Sample(rng) => {
            let n = dims.iter().product();
            let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
            Tensor::new(dims.clone(), data)?
        }
        Noise::Fixed(t) => t,
    };
    if eps.shape() != dims.as_slice() {
        return Err(NumericError::ShapeMismatch {
            op: "vgae noise",
            detail: format!("{:?} vs {:?}", eps.shape(), dims),
        });
    }
    let eps_var = tape.constant(eps.clone());
    let sigma = tape.exp(log_std);
    let scaled = tape.mul(eps_var, sigma)?;
    let latent = tape.add(mean, scaled)?;

    let zu = tape.gather_rows(latent, index.target_user.clone())?;
    let zi = tape.gather_rows(latent, index.target_item.clone())?;
    let target_predictions = tape.dot_rows(zu, zi)?;
    let eu = tape.gather_rows(latent, index.edge_user.clone())?;
    let ei = tape.gather_rows(latent, index.edge_item.clone())?;
    let reconstruction_predictions = tape.dot_rows(eu, ei)?;
    Ok(VgaeOutput { latent, mean, log_std, noise: eps, target_predictions, reconstruction_predictions })
}

/// Node-averaged KL divergence from `N(μ, σ²)` to the standard normal:
/// `mean_v −½ Σ_d (1 + log σ² − μ² − σ²)`.
pub fn kl_divergence(tape: &mut Tape, mean: Var, log_std: Var) -> Result<Var, NumericError> {
    let nodes = tape.value(mean).rows();
    let log_var = tape.scale(log_std, 2.0);
    let var = tape.exp(log_var);
    let mu2 = tape.mul(mean, mean)?;
    let a = tape.add_const(log_var, 1.0);
    let b = tape.sub(a, mu2)?;
    let c = tape.sub(b, var)?;
    let total = tape.sum(c);
    Ok(tape.scale(total, -0.5 / nodes as f64))
}
