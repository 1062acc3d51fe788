//! Seeded rating data with a planted low-rank structure, for tests and
//! demos that need a learnable signal.
//!
//! Each user gets a bias `b_u` and taste `a_u`, each item a bias `b_i` and
//! loading `c_i`; the noiseless rating is `3 + b_u + b_i + a_u c_i`, i.e.
//! the inner product of the rank-3 factors `(1, b_u, a_u)` and
//! `(b_i, 1, c_i)` around the scale midpoint. Observed ratings add Gaussian
//! noise, then round and clamp to the scale.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetError, RatingDataset, RatingScale, RatingTriple};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub users: usize,
    pub items: usize,
    pub ratings_per_user: usize,
    pub user_bias_sd: f64,
    pub item_bias_sd: f64,
    pub factor_sd: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            users: 200,
            items: 100,
            ratings_per_user: 12,
            user_bias_sd: 0.5,
            item_bias_sd: 0.6,
            factor_sd: 0.8,
            noise_sd: 0.3,
            seed: 0,
        }
    }
}

/// Latent factors behind a generated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedFactors {
    pub user_bias: Vec<f64>,
    pub user_taste: Vec<f64>,
    pub item_bias: Vec<f64>,
    pub item_loading: Vec<f64>,
}

impl PlantedFactors {
    /// Noiseless, unrounded rating.
    pub fn expected(&self, user: usize, item: usize, scale: RatingScale) -> f64 {
        scale.midpoint() + self.user_bias[user] + self.item_bias[item] + self.user_taste[user] * self.item_loading[item]
    }
}

/// Users are `u0..`, items `i0..`; every user rates `ratings_per_user`
/// distinct items chosen uniformly. Timestamps count up in generation
/// order.
pub fn planted(cfg: &PlantedConfig, scale: RatingScale) -> Result<(RatingDataset, PlantedFactors), DatasetError> {
    let normal = |sd: f64| Normal::new(0.0, sd).map_err(|e| DatasetError::Malformed(e.to_string()));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (ub, ut, ib, il) = (normal(cfg.user_bias_sd)?, normal(cfg.factor_sd)?, normal(cfg.item_bias_sd)?, normal(cfg.factor_sd)?);
    let factors = PlantedFactors {
        user_bias: (0..cfg.users).map(|_| ub.sample(&mut rng)).collect(),
        user_taste: (0..cfg.users).map(|_| ut.sample(&mut rng)).collect(),
        item_bias: (0..cfg.items).map(|_| ib.sample(&mut rng)).collect(),
        item_loading: (0..cfg.items).map(|_| il.sample(&mut rng)).collect(),
    };
    let noise = normal(cfg.noise_sd)?;
    let per_user = cfg.ratings_per_user.min(cfg.items);
    let mut triples = Vec::with_capacity(cfg.users * per_user);
    for u in 0..cfg.users {
        let mut items = sample(&mut rng, cfg.items, per_user).into_vec();
        items.sort_unstable();
        for i in items {
            let r = (factors.expected(u, i, scale) + noise.sample(&mut rng)).round().clamp(scale.min, scale.max);
            triples.push(RatingTriple {
                user_id: format!("u{u}"),
                item_id: format!("i{i}"),
                rating: r,
                timestamp: triples.len() as i64,
            });
        }
    }
    Ok((RatingDataset::from_triples(triples, scale)?, factors))
}
