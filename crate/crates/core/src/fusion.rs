//! Cross-view contrastive alignment, the fused prediction head, and the
//! assembled training objective.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::RatingScale;
use crate::layers::{init_mlp2, Mlp2, MessageIndex, OutputInit};
use crate::numeric::{NumericError, ParamStore, Tape, Tensor, Var};

pub const PREFIX: &str = "fusion";

/// Added to the negatives-only denominator.
pub const DENOMINATOR_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("BatchTooSmall: contrastive loss needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// Loss coefficients: `alpha` scales reconstruction, `beta` the KL term,
/// `lambda` the contrastive term; `tau` is the similarity temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 0.01, beta: 0.001, lambda: 0.001, tau: 0.2 }
    }
}

/// Which similarities enter the contrastive denominator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveDenominator {
    /// Every column of the row, the positive pair included.
    #[default]
    All,
    /// Off-diagonal columns only, plus a small ε.
    NegativesOnly,
}

/// Head input is `[h1(u) ∥ h2(u) ∥ h1(i) ∥ h2(i)]`, i.e. `4d`.
pub fn init_params(store: &mut ParamStore, rng: &mut ChaCha8Rng, embedding_dim: usize) {
    let d = embedding_dim;
    init_mlp2(store, rng, &format!("{PREFIX}.head"), (4 * d, d, 1), OutputInit::Constant(0.0), true);
}

/// Similarity matrix `z1 · z2ᵀ / τ`.
pub fn similarities(tape: &mut Tape, z1: Var, z2: Var, tau: f64) -> Result<Var, NumericError> {
    let z2t = tape.transpose(z2)?;
    let s = tape.matmul(z1, z2t)?;
    Ok(tape.scale(s, 1.0 / tau))
}

/// Mean over rows of `−log( exp(s_ii) / Σ_j exp(s_ij) )` where `s` is
/// [`similarities`]; with [`ContrastiveDenominator::NegativesOnly`] the sum
/// skips `j = i` and adds [`DENOMINATOR_EPS`].
pub fn contrastive_loss(
    tape: &mut Tape,
    z1: Var,
    z2: Var,
    tau: f64,
    denominator: ContrastiveDenominator,
) -> Result<Var, FusionError> {
    let b = tape.value(z1).rows();
    if b < 2 || tape.value(z1).ndim() != 2 {
        return Err(FusionError::BatchTooSmall(b));
    }
    if tape.value(z1).shape() != tape.value(z2).shape() {
        return Err(NumericError::ShapeMismatch {
            op: "contrastive_loss",
            detail: format!("{:?} vs {:?}", tape.value(z1).shape(), tape.value(z2).shape()),
        }
        .into());
    }
    let s = similarities(tape, z1, z2, tau)?;
    let eye = identity(b);
    match denominator {
        ContrastiveDenominator::All => {
            let ls = tape.log_softmax_rows(s)?;
            let eye = tape.constant(eye);
            let diag = tape.mul(ls, eye)?;
            let total = tape.sum(diag);
            Ok(tape.scale(total, -1.0 / b as f64))
        }
        ContrastiveDenominator::NegativesOnly => {
            // Shift each row by its maximum m_i (a constant) so exp cannot
            // overflow: log(Σ_{j≠i} e^{s_ij} + ε) = m_i + log(Σ_{j≠i} e^{s_ij - m_i} + ε e^{-m_i}).
            let sv = tape.value(s).clone();
            let row_max: Vec<f64> = (0..b).map(|r| sv.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
            let shift = tape.constant(Tensor::matrix(b, b, row_max.iter().flat_map(|&m| vec![m; b]).collect())?);
            let off_diag = tape.constant(eye.map(|v| 1.0 - v));
            let shifted = tape.sub(s, shift)?;
            let e = tape.exp(shifted);
            let e = tape.mul(e, off_diag)?;
            let ones = tape.constant(Tensor::full(&[b, 1], 1.0));
            let row_sum = tape.matmul(e, ones)?;
            let row_sum = tape.reshape(row_sum, &[b])?;
            let eps = tape.constant(Tensor::vector(row_max.iter().map(|m| DENOMINATOR_EPS * (-m).exp()).collect()));
            let denom = tape.add(row_sum, eps)?;
            let log_denom = tape.log(denom);
            let m = tape.constant(Tensor::vector(row_max));
            let log_denom = tape.add(log_denom, m)?;
            let eye = tape.constant(eye);
            let diag_m = tape.mul(s, eye)?;
            let ones_b = tape.constant(Tensor::full(&[b, 1], 1.0));
            let pos = tape.matmul(diag_m, ones_b)?;
            let pos = tape.reshape(pos, &[b])?;
            let per_row = tape.sub(log_denom, pos)?;
            Ok(tape.mean(per_row)?)
        }
    }
}

fn identity(n: usize) -> Tensor {
    let mut t = Tensor::zeros(&[n, n]);
    for i in 0..n {
        t.data_mut()[i * n + i] = 1.0;
    }
    t
}

/// Per-target embeddings of the two views and the fused prediction.
#[derive(Clone, Debug)]
pub struct FusionOutput {
    /// Ratings in `[scale.min, scale.max]`, one per target.
    pub predictions: Var,
    /// Head output before the sigmoid.
    pub raw: Var,
    pub view1_users: Var,
    pub view1_items: Var,
    pub view2_users: Var,
    pub view2_items: Var,
}

/// `prediction = min + sigmoid(MLP(h1(u) ∥ h2(u) ∥ h1(i) ∥ h2(i))) · (max − min)`.
pub fn fuse_predict(
    tape: &mut Tape,
    index: &MessageIndex,
    h1: Var,
    h2: Var,
    head: &Mlp2,
    scale: RatingScale,
) -> Result<FusionOutput, NumericError> {
    let view1_users = tape.gather_rows(h1, index.target_user.clone())?;
    let view2_users = tape.gather_rows(h2, index.target_user.clone())?;
    let view1_items = tape.gather_rows(h1, index.target_item.clone())?;
    let view2_items = tape.gather_rows(h2, index.target_item.clone())?;
    let x = tape.concat(&[view1_users, view2_users, view1_items, view2_items], 1)?;
    let raw = head.forward(tape, x)?;
    let raw = tape.reshape(raw, &[index.target_user.len()])?;
    let p = tape.sigmoid(raw);
    let p = tape.scale(p, scale.width());
    let predictions = tape.add_const(p, scale.min);
    Ok(FusionOutput { predictions, raw, view1_users, view1_items, view2_users, view2_items })
}

/// `(L_s(user) + L_s(item)) / 2` with view 1 as the anchor side.
pub fn contrastive_term(
    tape: &mut Tape,
    fused: &FusionOutput,
    weights: &LossWeights,
    denominator: ContrastiveDenominator,
) -> Result<Var, FusionError> {
    let users = contrastive_loss(tape, fused.view1_users, fused.view2_users, weights.tau, denominator)?;
    let items = contrastive_loss(tape, fused.view1_items, fused.view2_items, weights.tau, denominator)?;
    let both = tape.add(users, items)?;
    Ok(tape.scale(both, 0.5))
}

/// Mean squared error against fixed targets; zero for empty inputs.
pub fn mse(tape: &mut Tape, predictions: Var, targets: &[f64]) -> Result<Var, NumericError> {
    if targets.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let t = tape.constant(Tensor::new(tape.value(predictions).shape().to_vec(), targets.to_vec())?);
    let d = tape.sub(predictions, t)?;
    let sq = tape.mul(d, d)?;
    tape.mean(sq)
}

/// Values of every loss component for one step. Components belonging to a
/// disabled view are exactly zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    #[serde(rename = "L_view1")]
    pub view1: f64,
    #[serde(rename = "L_pred")]
    pub pred: f64,
    #[serde(rename = "L_rec")]
    pub rec: f64,
    #[serde(rename = "L_KL")]
    pub kl: f64,
    #[serde(rename = "L_view2")]
    pub view2: f64,
    #[serde(rename = "L_cl")]
    pub contrastive: f64,
    #[serde(rename = "L_final")]
    pub final_pred: f64,
    #[serde(rename = "L_total")]
    pub total: f64,
}

/// Tape handles of the individual terms that make up the objective.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub view1: Option<Var>,
    pub pred: Option<Var>,
    pub rec: Option<Var>,
    pub kl: Option<Var>,
    pub contrastive: Option<Var>,
    pub final_pred: Var,
}

/// `L = L_view1 + (L_pred + α L_rec + β L_KL) + (L_final + λ L_cl)`; absent
/// terms count as zero.
pub fn total_loss(
    tape: &mut Tape,
    parts: &LossParts,
    weights: &LossWeights,
) -> Result<(Var, LossBreakdown), NumericError> {
    let value = |tape: &Tape, v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item());
    // Summed left to right in the order the objective is written.
    let ordered = [
        (parts.view1, 1.0),
        (parts.pred, 1.0),
        (parts.rec, weights.alpha),
        (parts.kl, weights.beta),
        (Some(parts.final_pred), 1.0),
        (parts.contrastive, weights.lambda),
    ];
    let mut total: Option<Var> = None;
    for (term, coeff) in ordered {
        let Some(v) = term else { continue };
        let v = if coeff == 1.0 { v } else { tape.scale(v, coeff) };
        total = Some(match total {
            Some(acc) => tape.add(acc, v)?,
            None => v,
        });
    }
    let total = total.expect("final prediction term is always present");

    let (pred, rec, kl) = (value(tape, parts.pred), value(tape, parts.rec), value(tape, parts.kl));
    let breakdown = LossBreakdown {
        view1: value(tape, parts.view1),
        pred,
        rec,
        kl,
        view2: if parts.pred.is_some() { pred + weights.alpha * rec + weights.beta * kl } else { 0.0 },
        contrastive: value(tape, parts.contrastive),
        final_pred: tape.value(parts.final_pred).item(),
        total: tape.value(total).item(),
    };
    Ok((total, breakdown))
}
