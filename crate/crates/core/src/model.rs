//! The full two-view model: both views, the fused head, and the objective
//! for each ablation mode.

use rand::SeedableRng;
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::RatingScale;
use crate::denoise::{self, DenoiseOutput, DenoiseShape};
use crate::fusion::{self, ContrastiveDenominator, FusionError, FusionOutput, LossBreakdown, LossParts, LossWeights};
use crate::graph::{batch, extract_subgraph_with, BipartiteGraph, ExtractOptions, GraphError, SubgraphBatch};
use crate::layers::{label_features, Mlp2, MessageIndex};
use crate::numeric::{BoundParams, NumericError, ParamStore, Tape, Var};
use crate::vgae::{self, Noise, VgaeOutput, VgaeShape};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("MissingTargetRating: batch member {0} has no rating to regress on")]
    MissingTargetRating(usize),
}

/// Which views take part in training and prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    #[default]
    Full,
    DenoiseOnly,
    VgaeOnly,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] = [AblationMode::VgaeOnly, AblationMode::DenoiseOnly, AblationMode::Full];

    pub fn uses_denoise(self) -> bool {
        self != AblationMode::VgaeOnly
    }

    pub fn uses_vgae(self) -> bool {
        self != AblationMode::DenoiseOnly
    }

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::DenoiseOnly => "denoise_only",
            AblationMode::VgaeOnly => "vgae_only",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub embedding_dim: usize,
    pub denoise_layers: usize,
    pub vgae_layers: usize,
    pub scale: RatingScale,
    pub contrastive_denominator: ContrastiveDenominator,
}

impl ModelShape {
    pub fn relations(&self) -> usize {
        self.scale.levels()
    }

    pub fn denoise(&self) -> DenoiseShape {
        DenoiseShape { embedding_dim: self.embedding_dim, layers: self.denoise_layers, relations: self.relations() }
    }

    pub fn vgae(&self) -> VgaeShape {
        VgaeShape { embedding_dim: self.embedding_dim, layers: self.vgae_layers, relations: self.relations() }
    }
}

/// Everything one forward pass produced.
#[derive(Clone, Debug)]
pub struct Forward {
    pub view1: Option<DenoiseOutput>,
    pub view2: Option<VgaeOutput>,
    pub fused: FusionOutput,
    pub attention_calls: usize,
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub forward: Forward,
    pub loss: Var,
    pub breakdown: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mccl {
    pub shape: ModelShape,
    pub params: ParamStore,
}

impl Mccl {
    /// Fresh parameters for both views and the head, whatever the mode, so
    /// that every ablation shares one checkpoint layout.
    pub fn init(shape: ModelShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        denoise::init_params(&mut params, &mut rng, &shape.denoise());
        vgae::init_params(&mut params, &mut rng, &shape.vgae());
        fusion::init_params(&mut params, &mut rng, shape.embedding_dim);
        Mccl { shape, params }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        batch: &SubgraphBatch,
        index: &MessageIndex,
        mode: AblationMode,
        noise: Noise<'_>,
    ) -> Result<Forward, ModelError> {
        let features = tape.constant(label_features(batch));
        let view1 = if mode.uses_denoise() {
            Some(denoise::forward(tape, index, features, bound, &self.shape.denoise())?)
        } else {
            None
        };
        let view2 = if mode.uses_vgae() {
            Some(vgae::encode(tape, index, features, bound, &self.shape.vgae(), noise)?)
        } else {
            None
        };
        // A missing view's slot is filled with the surviving view.
        let (h1, h2) = match (&view1, &view2) {
            (Some(a), Some(b)) => (a.embeddings, b.latent),
            (Some(a), None) => (a.embeddings, a.embeddings),
            (None, Some(b)) => (b.latent, b.latent),
            (None, None) => unreachable!("every mode runs at least one view"),
        };
        let head = Mlp2::bind(bound, &format!("{}.head", fusion::PREFIX))?;
        let fused = fusion::fuse_predict(tape, index, h1, h2, &head, self.shape.scale)?;
        let attention_calls = view1.as_ref().map_or(0, |v| v.attention_calls);
        Ok(Forward { view1, view2, fused, attention_calls })
    }

    /// Forward pass plus the objective for `mode`.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        batch: &SubgraphBatch,
        index: &MessageIndex,
        mode: AblationMode,
        weights: &LossWeights,
        noise: Noise<'_>,
    ) -> Result<StepOutput, ModelError> {
        let targets = target_ratings(batch)?;
        let forward = self.forward(tape, bound, batch, index, mode, noise)?;
        let mut parts = LossParts {
            view1: None,
            pred: None,
            rec: None,
            kl: None,
            contrastive: None,
            final_pred: fusion::mse(tape, forward.fused.predictions, &targets)?,
        };
        if let Some(v1) = &forward.view1 {
            parts.view1 = Some(fusion::mse(tape, v1.predictions, &targets)?);
        }
        if let Some(v2) = &forward.view2 {
            let edge_ratings: Vec<f64> = batch.edges.iter().map(|e| e.rating).collect();
            parts.pred = Some(fusion::mse(tape, v2.target_predictions, &targets)?);
            parts.rec = Some(fusion::mse(tape, v2.reconstruction_predictions, &edge_ratings)?);
            parts.kl = Some(vgae::kl_divergence(tape, v2.mean, v2.log_std)?);
        }
        if mode == AblationMode::Full {
            parts.contrastive =
                Some(fusion::contrastive_term(tape, &forward.fused, weights, self.shape.contrastive_denominator)?);
        }
        let (loss, breakdown) = fusion::total_loss(tape, &parts, weights)?;
        Ok(StepOutput { forward, loss, breakdown })
    }

    /// Evaluation-mode predictions (ε = 0, no gradients).
    pub fn predict(&self, batch: &SubgraphBatch, mode: AblationMode) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let index = MessageIndex::new(batch, self.shape.relations());
        let fwd = self.forward(&mut tape, &bound, batch, &index, mode, Noise::Zero)?;
        Ok(tape.value(fwd.fused.predictions).data().to_vec())
    }
}

pub fn target_ratings(batch: &SubgraphBatch) -> Result<Vec<f64>, ModelError> {
    batch
        .targets
        .iter()
        .enumerate()
        .map(|(k, t)| t.rating.ok_or(ModelError::MissingTargetRating(k)))
        .collect()
}

/// Evaluation-mode predictions for arbitrary (user, item) pairs, each scored
/// on its enclosing subgraph in `graph`. Chunks of `batch_size` pairs are
/// scored in parallel on the current rayon pool; output order follows
/// `pairs`.
pub fn predict_pairs(
    model: &Mccl,
    graph: &BipartiteGraph,
    pairs: &[(usize, usize)],
    mode: AblationMode,
    opts: &ExtractOptions,
    batch_size: usize,
) -> Result<Vec<f64>, ModelError> {
    let chunks: Vec<Vec<f64>> = pairs
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let subgraphs = chunk
                .iter()
                .map(|&(u, i)| extract_subgraph_with(graph, u, i, opts))
                .collect::<Result<Vec<_>, _>>()?;
            model.predict(&batch(&subgraphs)?, mode)
        })
        .collect::<Result<_, _>>()?;
    Ok(chunks.concat())
}
