//! Rating-error and ranking metrics.
//!
//! Rating-based metrics rank each user's own test items by predicted score;
//! ranking-based metrics put one held-out positive among sampled negatives.
//! Every ordering is by descending score with ties broken by ascending item
//! index.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::RatingDataset;
use crate::graph::BipartiteGraph;

pub const DEFAULT_CUTOFF: usize = 10;
pub const DEFAULT_NEGATIVES: usize = 99;
pub const DEFAULT_RELEVANCE_THRESHOLD: f64 = 4.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("EmptyInput: no predictions to score")]
    EmptyInput,
    #[error("LengthMismatch: {preds} predictions for {targets} targets")]
    LengthMismatch { preds: usize, targets: usize },
    #[error("NoEvaluableUsers: {0}")]
    NoEvaluableUsers(&'static str),
    #[error("InsufficientNegatives: user {user} has {available} non-interacted items, {needed} needed")]
    InsufficientNegatives { user: usize, available: usize, needed: usize },
}

pub fn rmse(preds: &[f64], targets: &[f64]) -> Result<f64, MetricsError> {
    if preds.len() != targets.len() {
        return Err(MetricsError::LengthMismatch { preds: preds.len(), targets: targets.len() });
    }
    if preds.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let sq: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sq / preds.len() as f64).sqrt())
}

/// One candidate item with the model's score and its true rating.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub item: usize,
    pub score: f64,
    pub rating: f64,
}

/// Descending score, then ascending item index.
pub fn ranking_order(a: &ScoredItem, b: &ScoredItem) -> Ordering {
    b.score.total_cmp(&a.score).then(a.item.cmp(&b.item))
}

fn ranked(items: &[ScoredItem]) -> Vec<ScoredItem> {
    let mut v = items.to_vec();
    v.sort_by(ranking_order);
    v
}

/// A per-user mean together with how many users entered it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserMean {
    pub value: f64,
    pub users_evaluated: usize,
    pub users_skipped: usize,
}

fn dcg(rels: impl Iterator<Item = f64>) -> f64 {
    rels.enumerate().map(|(i, r)| r / ((i + 2) as f64).log2()).sum()
}

/// Mean NDCG@`n` with true ratings as relevance. Users whose ideal DCG is 0
/// are skipped and counted in `users_skipped`.
pub fn ndcg_rating(users: &[Vec<ScoredItem>], n: usize) -> Result<UserMean, MetricsError> {
    let mut total = 0.0;
    let (mut evaluated, mut skipped) = (0, 0);
    for items in users {
        if items.is_empty() {
            continue;
        }
        let predicted = ranked(items);
        let mut ideal: Vec<f64> = items.iter().map(|x| x.rating).collect();
        ideal.sort_by(|a, b| b.total_cmp(a));
        let idcg = dcg(ideal.into_iter().take(n));
        if idcg == 0.0 {
            skipped += 1;
            continue;
        }
        total += dcg(predicted.iter().take(n).map(|x| x.rating)) / idcg;
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(MetricsError::NoEvaluableUsers("no user has a positive ideal DCG"));
    }
    Ok(UserMean { value: total / evaluated as f64, users_evaluated: evaluated, users_skipped: skipped })
}

/// Mean over users of `1 / rank` (1-indexed) of the first item rated at
/// least `threshold` within the top `n`; users without any such item are
/// skipped.
pub fn mrr_rating(users: &[Vec<ScoredItem>], n: usize, threshold: f64) -> Result<UserMean, MetricsError> {
    let mut total = 0.0;
    let (mut evaluated, mut skipped) = (0, 0);
    for items in users {
        if !items.iter().any(|x| x.rating >= threshold) {
            skipped += usize::from(!items.is_empty());
            continue;
        }
        let predicted = ranked(items);
        if let Some(pos) = predicted.iter().take(n).position(|x| x.rating >= threshold) {
            total += 1.0 / (pos + 1) as f64;
        }
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(MetricsError::NoEvaluableUsers("no user has a highly rated test item"));
    }
    Ok(UserMean { value: total / evaluated as f64, users_evaluated: evaluated, users_skipped: skipped })
}

fn user_seed(seed: u64, user: usize) -> u64 {
    let mut z = seed.wrapping_add((user as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `k` distinct items the user never interacted with in `interactions`,
/// drawn uniformly without replacement and seeded per `(seed, user)`.
/// Returned in ascending item order.
pub fn sample_negatives(
    interactions: &BipartiteGraph,
    user: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<usize>, MetricsError> {
    let seen = interactions.user_neighbors(user);
    let mut candidates = Vec::with_capacity(interactions.n_items().saturating_sub(seen.len()));
    let mut s = seen.iter().map(|n| n.index).peekable();
    for item in 0..interactions.n_items() {
        if s.peek() == Some(&item) {
            s.next();
        } else {
            candidates.push(item);
        }
    }
    if candidates.len() < k {
        return Err(MetricsError::InsufficientNegatives { user, available: candidates.len(), needed: k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(user_seed(seed, user));
    let mut picked: Vec<usize> = sample(&mut rng, candidates.len(), k).into_iter().map(|p| candidates[p]).collect();
    picked.sort_unstable();
    Ok(picked)
}

/// 0-indexed position of `positive` among `candidates` in ranking order.
pub fn rank_of(positive: &ScoredItem, candidates: &[ScoredItem]) -> usize {
    candidates
        .iter()
        .filter(|c| c.item != positive.item && ranking_order(c, positive) == Ordering::Less)
        .count()
}

/// `(MRR, NDCG)` contribution of a positive at 0-indexed `rank`.
pub fn ranking_contribution(rank: usize, n: usize) -> (f64, f64) {
    if rank < n {
        (1.0 / (rank + 1) as f64, 1.0 / ((rank + 2) as f64).log2())
    } else {
        (0.0, 0.0)
    }
}

/// Ranking-protocol metrics averaged over users.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub ndcg: f64,
    pub mrr: f64,
    pub users_evaluated: usize,
}

/// Each user's most recent test interaction (ties: largest item index).
pub fn latest_positives(test: &RatingDataset) -> BTreeMap<usize, usize> {
    let mut best: BTreeMap<usize, (i64, usize)> = BTreeMap::new();
    for x in test.interactions() {
        let e = best.entry(x.user).or_insert((x.timestamp, x.item));
        if (x.timestamp, x.item) > *e {
            *e = (x.timestamp, x.item);
        }
    }
    best.into_iter().map(|(u, (_, i))| (u, i)).collect()
}

/// For each user with a test interaction, scores the latest positive plus
/// `negatives` sampled items with `score` and ranks the positive.
///
/// `interactions` must contain every known interaction (train, validation
/// and test) so that no negative is a hidden positive. `score` receives
/// all (user, item) pairs at once and returns one score per pair.
pub fn ranking_protocol<E: From<MetricsError>>(
    interactions: &BipartiteGraph,
    test: &RatingDataset,
    n: usize,
    negatives: usize,
    seed: u64,
    score: impl FnOnce(&[(usize, usize)]) -> Result<Vec<f64>, E>,
) -> Result<RankingMetrics, E> {
    let positives = latest_positives(test);
    if positives.is_empty() {
        return Err(MetricsError::NoEvaluableUsers("no user has a test interaction").into());
    }
    let mut pairs = Vec::with_capacity(positives.len() * (negatives + 1));
    for (&user, &item) in &positives {
        let neg = sample_negatives(interactions, user, negatives, seed)?;
        pairs.push((user, item));
        pairs.extend(neg.into_iter().map(|j| (user, j)));
    }
    let scores = score(&pairs)?;
    assert_eq!(scores.len(), pairs.len(), "scorer must return one score per pair");
    let (mut mrr, mut ndcg) = (0.0, 0.0);
    for (block, s) in pairs.chunks(negatives + 1).zip(scores.chunks(negatives + 1)) {
        let cands: Vec<ScoredItem> =
            block.iter().zip(s).map(|(&(_, item), &score)| ScoredItem { item, score, rating: 0.0 }).collect();
        let (m, g) = ranking_contribution(rank_of(&cands[0], &cands), n);
        mrr += m;
        ndcg += g;
    }
    let users = positives.len();
    Ok(RankingMetrics { ndcg: ndcg / users as f64, mrr: mrr / users as f64, users_evaluated: users })
}

/// Groups test predictions per user for the rating-based metrics.
pub fn group_by_user(test: &RatingDataset, predictions: &[f64]) -> Vec<Vec<ScoredItem>> {
    let mut by_user: BTreeMap<usize, Vec<ScoredItem>> = BTreeMap::new();
    for (x, &score) in test.interactions().iter().zip(predictions) {
        by_user.entry(x.user).or_default().push(ScoredItem { item: x.item, score, rating: x.rating });
    }
    by_user.into_values().collect()
}

/// Settings of a full evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub cutoff: usize,
    pub negatives: usize,
    pub relevance_threshold: f64,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            cutoff: DEFAULT_CUTOFF,
            negatives: DEFAULT_NEGATIVES,
            relevance_threshold: DEFAULT_RELEVANCE_THRESHOLD,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub ndcg_rating: f64,
    pub mrr_rating: f64,
    pub ndcg_ranking: f64,
    pub mrr_ranking: f64,
    pub cutoff: usize,
    pub negatives: usize,
    /// Users entering the ranking protocol.
    pub users_evaluated: usize,
    /// Users dropped from NDCG-rating for having an ideal DCG of 0.
    pub users_skipped: usize,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "rmse,ndcg_rating,mrr_rating,ndcg_ranking,mrr_ranking";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.rmse, self.ndcg_rating, self.mrr_rating, self.ndcg_ranking, self.mrr_ranking
        )
    }
}
