//! Reference implementations written with plain loops over `Vec`s, shared
//! by the integration tests. None of them touch the tape.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use mccl::graph::{BipartiteGraph, EnclosingSubgraph, NodeLabel, NodeRef};
use mccl::metrics::ScoredItem;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-scale..scale)).collect()).collect()
}

pub fn flat(m: &Mat) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

/// `−½ Σ (1 + 2 log σ − μ² − σ²)` per node, averaged over nodes.
pub fn kl(mean: &Mat, log_std: &Mat) -> f64 {
    let mut total = 0.0;
    for (mu_row, ls_row) in mean.iter().zip(log_std) {
        let mut node = 0.0;
        for (&mu, &ls) in mu_row.iter().zip(ls_row) {
            let var = (2.0 * ls).exp();
            node += 1.0 + var.ln() - mu * mu - var;
        }
        total += -0.5 * node;
    }
    total / mean.len() as f64
}

/// Mean over rows of `−log(exp(s_ii) / Σ_j exp(s_ij))`, `s = z1 z2ᵀ / τ`.
/// With `negatives_only` the sum skips `j = i` and adds `eps`.
pub fn contrastive(z1: &Mat, z2: &Mat, tau: f64, negatives_only: bool, eps: f64) -> f64 {
    let b = z1.len();
    let mut total = 0.0;
    for i in 0..b {
        let s: Vec<f64> = (0..b)
            .map(|j| z1[i].iter().zip(&z2[j]).map(|(a, c)| a * c).sum::<f64>() / tau)
            .collect();
        let mut denom = 0.0;
        for (j, &sj) in s.iter().enumerate() {
            if negatives_only && j == i {
                continue;
            }
            denom += sj.exp();
        }
        if negatives_only {
            denom += eps;
        }
        total += -(s[i].exp() / denom).ln();
    }
    total / b as f64
}

pub fn normalize(scores: &[f64]) -> Vec<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &s in scores {
        lo = lo.min(s);
        hi = hi.max(s);
    }
    scores.iter().map(|&s| if hi == lo { 0.5 } else { (s - lo) / (hi - lo) }).collect()
}

/// An undirected typed edge with its attention weight.
#[derive(Clone, Copy, Debug)]
pub struct ToyEdge {
    pub user: usize,
    pub item: usize,
    pub relation: usize,
    pub alpha: f64,
}

/// `h'_v = ReLU(Σ_r Σ_{j∈N_v^r} α_vj h_j W_r + h_v W_0)` with explicit
/// per-node, per-component sums.
pub fn rgcn(h: &Mat, edges: &[ToyEdge], w_rel: &[Mat], w_self: &Mat) -> Mat {
    let n = h.len();
    let d_in = w_self.len();
    let d_out = w_self[0].len();
    let mut out = vec![vec![0.0; d_out]; n];
    for v in 0..n {
        for c in 0..d_out {
            let mut acc = 0.0;
            for k in 0..d_in {
                acc += h[v][k] * w_self[k][c];
            }
            for e in edges {
                let other = if e.user == v {
                    e.item
                } else if e.item == v {
                    e.user
                } else {
                    continue;
                };
                let w = &w_rel[e.relation - 1];
                for k in 0..d_in {
                    acc += e.alpha * h[other][k] * w[k][c];
                }
            }
            out[v][c] = acc.max(0.0);
        }
    }
    out
}

pub fn mse(preds: &[f64], targets: &[f64]) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let mut s = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        s += (p - t) * (p - t);
    }
    s / targets.len() as f64
}

/// Every input of the objective, as plain values.
#[derive(Clone, Debug)]
pub struct LossInputs {
    pub targets: Vec<f64>,
    pub view1_preds: Vec<f64>,
    pub view2_preds: Vec<f64>,
    pub edge_ratings: Vec<f64>,
    pub recon_preds: Vec<f64>,
    pub mean: Mat,
    pub log_std: Mat,
    pub final_preds: Vec<f64>,
    pub z1_users: Mat,
    pub z2_users: Mat,
    pub z1_items: Mat,
    pub z2_items: Mat,
}

pub fn total_loss(x: &LossInputs, alpha: f64, beta: f64, lambda: f64, tau: f64) -> f64 {
    let view1 = mse(&x.view1_preds, &x.targets);
    let view2 = mse(&x.view2_preds, &x.targets) + alpha * mse(&x.recon_preds, &x.edge_ratings) + beta * kl(&x.mean, &x.log_std);
    let cl = 0.5
        * (contrastive(&x.z1_users, &x.z2_users, tau, false, 0.0) + contrastive(&x.z1_items, &x.z2_items, tau, false, 0.0));
    view1 + view2 + mse(&x.final_preds, &x.targets) + lambda * cl
}

/// Enclosing subgraph by brute force over every graph edge: node set,
/// label per node, and the typed edge set, all keyed by global node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubgraphFacts {
    pub labels: BTreeMap<NodeRef, NodeLabel>,
    pub edges: BTreeSet<(usize, usize, usize)>,
}

pub fn brute_force_subgraph(all_edges: &[(usize, usize, usize)], u: usize, i: usize) -> SubgraphFacts {
    let mut users = BTreeSet::from([u]);
    let mut items = BTreeSet::from([i]);
    for &(v, j, _) in all_edges {
        if j == i {
            users.insert(v);
        }
        if v == u {
            items.insert(j);
        }
    }
    let mut labels = BTreeMap::new();
    for &v in &users {
        labels.insert(NodeRef::User(v), if v == u { NodeLabel::TargetUser } else { NodeLabel::User });
    }
    for &j in &items {
        labels.insert(NodeRef::Item(j), if j == i { NodeLabel::TargetItem } else { NodeLabel::Item });
    }
    let edges = all_edges
        .iter()
        .copied()
        .filter(|&(v, j, _)| users.contains(&v) && items.contains(&j) && (v, j) != (u, i))
        .collect();
    SubgraphFacts { labels, edges }
}

pub fn facts_of(sg: &EnclosingSubgraph) -> SubgraphFacts {
    let labels = sg.nodes.iter().copied().zip(sg.labels.iter().copied()).collect();
    let global = |k: usize| match sg.nodes[k] {
        NodeRef::User(x) | NodeRef::Item(x) => x,
    };
    let edges = sg.edges.iter().map(|e| (global(e.user), global(e.item), e.relation)).collect();
    SubgraphFacts { labels, edges }
}

pub fn graph_edges(g: &BipartiteGraph) -> Vec<(usize, usize, usize)> {
    (0..g.n_users())
        .flat_map(|u| g.user_neighbors(u).iter().map(move |n| (u, n.index, n.relation)))
        .collect()
}

/// 1-indexed position of every item: one plus the number of items that
/// beat it (higher score, or equal score and smaller item index).
pub fn positions(items: &[ScoredItem]) -> Vec<usize> {
    items
        .iter()
        .map(|a| {
            1 + items
                .iter()
                .filter(|b| b.score > a.score || (b.score == a.score && b.item < a.item))
                .count()
        })
        .collect()
}

pub fn ndcg_user(items: &[ScoredItem], n: usize) -> Option<f64> {
    let pos = positions(items);
    let mut dcg = 0.0;
    for (x, &p) in items.iter().zip(&pos) {
        if p <= n {
            dcg += x.rating / ((p + 1) as f64).log2();
        }
    }
    // Ideal order: selection by rating, one slot at a time.
    let mut left: Vec<f64> = items.iter().map(|x| x.rating).collect();
    let mut idcg = 0.0;
    for p in 1..=n.min(left.len()) {
        let (k, _) = left
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, &r)| if r > best.1 { (k, r) } else { best });
        idcg += left.remove(k) / ((p + 1) as f64).log2();
    }
    (idcg > 0.0).then(|| dcg / idcg)
}

pub fn mrr_user(items: &[ScoredItem], n: usize, threshold: f64) -> Option<f64> {
    if !items.iter().any(|x| x.rating >= threshold) {
        return None;
    }
    let pos = positions(items);
    let first = items
        .iter()
        .zip(&pos)
        .filter(|(x, &p)| x.rating >= threshold && p <= n)
        .map(|(_, &p)| p)
        .min();
    Some(first.map_or(0.0, |p| 1.0 / p as f64))
}

pub fn mean_of(xs: impl Iterator<Item = Option<f64>>) -> f64 {
    let v: Vec<f64> = xs.flatten().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sorts `(item, score)` candidates with an insertion sort and returns the
/// 0-indexed position of `positive`.
pub fn sorted_rank(candidates: &[(usize, f64)], positive: usize) -> usize {
    let mut order: Vec<(usize, f64)> = Vec::new();
    for &c in candidates {
        let at = order
            .iter()
            .position(|o| c.1 > o.1 || (c.1 == o.1 && c.0 < o.0))
            .unwrap_or(order.len());
        order.insert(at, c);
    }
    order.iter().position(|o| o.0 == positive).expect("positive among candidates")
}

/// Random ratings over `users × items`, each pair present with
/// probability `density`, at least one rating per user.
pub fn random_dataset(rng: &mut ChaCha8Rng, users: usize, items: usize, density: f64) -> mccl::dataset::RatingDataset {
    use mccl::dataset::{RatingDataset, RatingScale, RatingTriple};
    let mut triples = Vec::new();
    for u in 0..users {
        let forced = rng.random_range(0..items);
        for i in 0..items {
            if i == forced || rng.random_bool(density) {
                triples.push(RatingTriple {
                    user_id: format!("u{u}"),
                    item_id: format!("i{i}"),
                    rating: rng.random_range(1..=5) as f64,
                    timestamp: triples.len() as i64,
                });
            }
        }
    }
    RatingDataset::from_triples(triples, RatingScale::default()).unwrap()
}

/// Every parameter shifted by uniform noise in `±scale`, so that zero
/// initialisations do not hide gradient paths.
pub fn perturb(store: &mut mccl::numeric::ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    for (_, p) in store.iter_mut() {
        for x in p.value.data_mut() {
            *x += rng.random_range(-scale..scale);
        }
    }
}

pub fn bind_vars(names: &[String], vars: &[mccl::numeric::Var]) -> mccl::numeric::BoundParams {
    names.iter().cloned().zip(vars.iter().copied()).collect()
}

pub fn numeric(e: mccl::model::ModelError) -> mccl::numeric::NumericError {
    match e {
        mccl::model::ModelError::Numeric(n) => n,
        other => mccl::numeric::NumericError::MalformedCheckpoint(format!("unexpected model error: {other}")),
    }
}

/// Tape gradient of the full objective against central differences, for
/// every element of every parameter, with the reparameterisation noise
/// held fixed.
pub fn model_grad_check(
    model: &mccl::model::Mccl,
    batch: &mccl::graph::SubgraphBatch,
    mode: mccl::model::AblationMode,
    weights: &mccl::fusion::LossWeights,
    noise: &mccl::numeric::Tensor,
    tol: f64,
) -> mccl::numeric::GradCheckReport {
    use mccl::layers::MessageIndex;
    use mccl::vgae::Noise;
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    let inputs: Vec<_> = model.params.iter().map(|(_, p)| p.value.clone()).collect();
    let index = MessageIndex::new(batch, model.shape.relations());
    mccl::numeric::grad_check_many(
        |tape, vars| {
            let bound = bind_vars(&names, vars);
            model
                .step(tape, &bound, batch, &index, mode, weights, Noise::Fixed(noise.clone()))
                .map(|o| o.loss)
                .map_err(numeric)
        },
        &inputs,
        tol,
    )
    .unwrap()
}
