//! The typed bipartite rating graph, 1-hop enclosing subgraphs around a
//! target (user, item) pair, and disjoint-union batching.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::RatingDataset;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("InvalidIndex: {kind} {index} out of range (count {count})")]
    InvalidIndex { kind: &'static str, index: usize, count: usize },
    #[error("EmptyBatch: cannot batch zero subgraphs")]
    EmptyBatch,
    #[error("UnsupportedHops: only 1-hop subgraphs are implemented, got {0}")]
    UnsupportedHops(usize),
}

/// Adjacency entry: the counterpart node, its relation type and the raw
/// rating on the edge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub relation: usize,
    pub rating: f64,
}

/// Users and items joined by one typed edge per observed rating.
///
/// Every edge is stored in both the user's and the item's list; lists are
/// sorted by counterpart index.
#[derive(Clone, Debug, PartialEq)]
pub struct BipartiteGraph {
    n_users: usize,
    n_items: usize,
    max_relation: usize,
    user_adj: Vec<Vec<Neighbor>>,
    item_adj: Vec<Vec<Neighbor>>,
}

pub fn build_graph(data: &RatingDataset) -> BipartiteGraph {
    let scale = data.scale();
    let mut user_adj = vec![Vec::new(); data.n_users()];
    let mut item_adj = vec![Vec::new(); data.n_items()];
    for x in data.interactions() {
        let relation = scale.relation(x.rating);
        user_adj[x.user].push(Neighbor { index: x.item, relation, rating: x.rating });
        item_adj[x.item].push(Neighbor { index: x.user, relation, rating: x.rating });
    }
    for list in user_adj.iter_mut().chain(item_adj.iter_mut()) {
        list.sort_by_key(|n| n.index);
    }
    BipartiteGraph {
        n_users: data.n_users(),
        n_items: data.n_items(),
        max_relation: scale.levels(),
        user_adj,
        item_adj,
    }
}

impl BipartiteGraph {
    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// Number of relation types; relations run from 1 to this value.
    pub fn max_relation(&self) -> usize {
        self.max_relation
    }

    pub fn edge_count(&self) -> usize {
        self.user_adj.iter().map(Vec::len).sum()
    }

    pub fn user_neighbors(&self, user: usize) -> &[Neighbor] {
        &self.user_adj[user]
    }

    pub fn item_neighbors(&self, item: usize) -> &[Neighbor] {
        &self.item_adj[item]
    }

    pub fn edge(&self, user: usize, item: usize) -> Option<Neighbor> {
        let list = self.user_adj.get(user)?;
        list.binary_search_by_key(&item, |n| n.index).ok().map(|p| list[p])
    }

    fn check(&self, user: usize, item: usize) -> Result<(), GraphError> {
        if user >= self.n_users {
            return Err(GraphError::InvalidIndex { kind: "user", index: user, count: self.n_users });
        }
        if item >= self.n_items {
            return Err(GraphError::InvalidIndex { kind: "item", index: item, count: self.n_items });
        }
        Ok(())
    }
}

/// Global identity of a subgraph node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeRef {
    User(usize),
    Item(usize),
}

/// Structural role of a node inside its enclosing subgraph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeLabel {
    TargetUser,
    TargetItem,
    User,
    Item,
}

impl NodeLabel {
    pub const WIDTH: usize = 4;

    pub fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self.position()] = 1.0;
        v
    }

    pub fn position(self) -> usize {
        match self {
            NodeLabel::TargetUser => 0,
            NodeLabel::TargetItem => 1,
            NodeLabel::User => 2,
            NodeLabel::Item => 3,
        }
    }
}

/// Edge between a local user node and a local item node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalEdge {
    pub user: usize,
    pub item: usize,
    pub relation: usize,
    pub rating: f64,
}

/// Labeled 1-hop neighborhood of a (user, item) pair with the pair's own
/// edge removed. Node 0 is the target user and node 1 the target item.
#[derive(Clone, Debug, PartialEq)]
pub struct EnclosingSubgraph {
    pub nodes: Vec<NodeRef>,
    pub labels: Vec<NodeLabel>,
    pub edges: Vec<LocalEdge>,
    pub target_user: usize,
    pub target_item: usize,
    /// Rating on the removed edge; `None` when scoring an unobserved pair.
    pub target_rating: Option<f64>,
}

impl EnclosingSubgraph {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Debug dump: nodes with global ids and one-hot labels, plus edges.
    pub fn to_json(&self) -> serde_json::Value {
        let nodes: Vec<_> = self
            .nodes
            .iter()
            .zip(&self.labels)
            .map(|(n, l)| serde_json::json!({ "node": n, "label": l.one_hot() }))
            .collect();
        serde_json::json!({
            "nodes": nodes,
            "edges": self.edges,
            "target_user": self.target_user,
            "target_item": self.target_item,
            "target_rating": self.target_rating,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractOptions {
    pub hops: usize,
    /// Uniformly subsample each target's neighbor list to at most this
    /// many nodes.
    pub max_neighbors: Option<usize>,
    pub seed: u64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions { hops: 1, max_neighbors: None, seed: 0 }
    }
}

impl ExtractOptions {
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.hops != 1 {
            return Err(GraphError::UnsupportedHops(self.hops));
        }
        Ok(())
    }
}

pub fn extract_subgraph(g: &BipartiteGraph, user: usize, item: usize) -> Result<EnclosingSubgraph, GraphError> {
    extract_subgraph_with(g, user, item, &ExtractOptions::default())
}

/// Seed for the neighbor sample of one target pair, independent of the
/// order in which pairs are extracted.
fn pair_seed(seed: u64, user: usize, item: usize) -> u64 {
    let mut z = seed ^ (user as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (item as u64).rotate_left(32);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn capped(mut xs: Vec<usize>, cap: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match cap {
        Some(k) if xs.len() > k => {
            let mut picked: Vec<usize> = sample(rng, xs.len(), k).into_iter().map(|p| xs[p]).collect();
            picked.sort_unstable();
            picked
        }
        _ => {
            xs.sort_unstable();
            xs
        }
    }
}

/// Node set `{u, i} ∪ N(u) ∪ N(i)`; edges are every graph edge with both
/// endpoints in the set except `(u, i)` itself.
///
/// Runs in time linear in the summed degree of the subgraph's user nodes.
pub fn extract_subgraph_with(
    g: &BipartiteGraph,
    user: usize,
    item: usize,
    opts: &ExtractOptions,
) -> Result<EnclosingSubgraph, GraphError> {
    opts.validate()?;
    g.check(user, item)?;
    let mut rng = ChaCha8Rng::seed_from_u64(pair_seed(opts.seed, user, item));
    let other_users = capped(
        g.item_neighbors(item).iter().map(|n| n.index).filter(|&v| v != user).collect(),
        opts.max_neighbors,
        &mut rng,
    );
    let other_items = capped(
        g.user_neighbors(user).iter().map(|n| n.index).filter(|&v| v != item).collect(),
        opts.max_neighbors,
        &mut rng,
    );

    let n = 2 + other_users.len() + other_items.len();
    let mut nodes = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    nodes.push(NodeRef::User(user));
    labels.push(NodeLabel::TargetUser);
    nodes.push(NodeRef::Item(item));
    labels.push(NodeLabel::TargetItem);
    let mut item_local: HashMap<usize, usize> = HashMap::with_capacity(other_items.len() + 1);
    item_local.insert(item, 1);
    let mut user_locals = vec![(user, 0)];
    for &v in &other_users {
        user_locals.push((v, nodes.len()));
        nodes.push(NodeRef::User(v));
        labels.push(NodeLabel::User);
    }
    for &j in &other_items {
        item_local.insert(j, nodes.len());
        nodes.push(NodeRef::Item(j));
        labels.push(NodeLabel::Item);
    }

    let mut edges = Vec::new();
    for &(v, local_v) in &user_locals {
        for nb in g.user_neighbors(v) {
            if v == user && nb.index == item {
                continue;
            }
            if let Some(&local_j) = item_local.get(&nb.index) {
                edges.push(LocalEdge { user: local_v, item: local_j, relation: nb.relation, rating: nb.rating });
            }
        }
    }
    Ok(EnclosingSubgraph {
        nodes,
        labels,
        edges,
        target_user: 0,
        target_item: 1,
        target_rating: g.edge(user, item).map(|e| e.rating),
    })
}

/// A target pair inside a batch, in batch-global node indices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchTarget {
    pub user: usize,
    pub item: usize,
    pub rating: Option<f64>,
}

/// Disjoint union of subgraphs. Member `k` owns nodes
/// `node_offsets[k]..node_offsets[k + 1]` and the analogous edge range.
#[derive(Clone, Debug, PartialEq)]
pub struct SubgraphBatch {
    pub nodes: Vec<NodeRef>,
    pub labels: Vec<NodeLabel>,
    pub edges: Vec<LocalEdge>,
    pub node_offsets: Vec<usize>,
    pub edge_offsets: Vec<usize>,
    pub targets: Vec<BatchTarget>,
}

pub fn batch(subgraphs: &[EnclosingSubgraph]) -> Result<SubgraphBatch, GraphError> {
    if subgraphs.is_empty() {
        return Err(GraphError::EmptyBatch);
    }
    let mut out = SubgraphBatch {
        nodes: Vec::new(),
        labels: Vec::new(),
        edges: Vec::new(),
        node_offsets: vec![0],
        edge_offsets: vec![0],
        targets: Vec::with_capacity(subgraphs.len()),
    };
    for sg in subgraphs {
        let off = out.nodes.len();
        out.nodes.extend_from_slice(&sg.nodes);
        out.labels.extend_from_slice(&sg.labels);
        out.edges.extend(sg.edges.iter().map(|e| LocalEdge { user: e.user + off, item: e.item + off, ..*e }));
        out.targets.push(BatchTarget {
            user: sg.target_user + off,
            item: sg.target_item + off,
            rating: sg.target_rating,
        });
        out.node_offsets.push(out.nodes.len());
        out.edge_offsets.push(out.edges.len());
    }
    Ok(out)
}

impl SubgraphBatch {
    /// Number of member subgraphs.
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Member `k` with local indices restored.
    pub fn unbatch(&self, k: usize) -> EnclosingSubgraph {
        let (n0, n1) = (self.node_offsets[k], self.node_offsets[k + 1]);
        let (e0, e1) = (self.edge_offsets[k], self.edge_offsets[k + 1]);
        let t = self.targets[k];
        EnclosingSubgraph {
            nodes: self.nodes[n0..n1].to_vec(),
            labels: self.labels[n0..n1].to_vec(),
            edges: self.edges[e0..e1]
                .iter()
                .map(|e| LocalEdge { user: e.user - n0, item: e.item - n0, ..*e })
                .collect(),
            target_user: t.user - n0,
            target_item: t.item - n0,
            target_rating: t.rating,
        }
    }

    /// Member index owning each node.
    pub fn node_owner(&self) -> Vec<usize> {
        let mut owner = Vec::with_capacity(self.n_nodes());
        for k in 0..self.len() {
            owner.extend(std::iter::repeat_n(k, self.node_offsets[k + 1] - self.node_offsets[k]));
        }
        owner
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{parse_ratings, RatingScale};

    fn graph(text: &str) -> (RatingDataset, BipartiteGraph) {
        let d = parse_ratings(text, RatingScale::default()).unwrap();
        let g = build_graph(&d);
        (d, g)
    }

    #[test]
    fn single_edge_visible_from_both_ends() {
        let (_, g) = graph("u0,i0,5\n");
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.user_neighbors(0), &[Neighbor { index: 0, relation: 5, rating: 5.0 }]);
        assert_eq!(g.item_neighbors(0), &[Neighbor { index: 0, relation: 5, rating: 5.0 }]);
    }

    #[test]
    fn toy_subgraph() {
        // u=0, i=0, i2=1, u2=1
        let (_, g) = graph("u,i,5\nu,i2,3\nu2,i,4\n");
        let sg = extract_subgraph(&g, 0, 0).unwrap();
        assert_eq!(sg.nodes, vec![NodeRef::User(0), NodeRef::Item(0), NodeRef::User(1), NodeRef::Item(1)]);
        let mut got: Vec<_> = sg.edges.iter().map(|e| (sg.nodes[e.user], sg.nodes[e.item], e.relation)).collect();
        got.sort_by_key(|x| format!("{x:?}"));
        assert_eq!(
            got,
            vec![(NodeRef::User(0), NodeRef::Item(1), 3), (NodeRef::User(1), NodeRef::Item(0), 4)]
        );
        assert_eq!(sg.target_rating, Some(5.0));
        assert_eq!(
            sg.labels.iter().map(|l| l.one_hot()).collect::<Vec<_>>(),
            vec![[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
        );
    }

    #[test]
    fn lone_pair_has_no_edges() {
        let (_, g) = graph("u,i,2\n");
        let sg = extract_subgraph(&g, 0, 0).unwrap();
        assert_eq!(sg.n_nodes(), 2);
        assert!(sg.edges.is_empty());
    }

    #[test]
    fn invalid_indices_and_hops() {
        let (_, g) = graph("u,i,2\n");
        assert!(matches!(extract_subgraph(&g, 1, 0), Err(GraphError::InvalidIndex { kind: "user", .. })));
        assert!(matches!(extract_subgraph(&g, 0, 3), Err(GraphError::InvalidIndex { kind: "item", .. })));
        let opts = ExtractOptions { hops: 2, ..Default::default() };
        assert_eq!(extract_subgraph_with(&g, 0, 0, &opts), Err(GraphError::UnsupportedHops(2)));
    }

    #[test]
    fn batching_offsets() {
        let (_, g) = graph("a,x,1\na,y,2\nb,x,3\nc,y,4\nc,z,5\nb,z,1\n");
        let s1 = extract_subgraph(&g, 0, 0).unwrap();
        let s2 = extract_subgraph(&g, 2, 2).unwrap();
        let b = batch(&[s1.clone(), s2.clone()]).unwrap();
        assert_eq!(b.n_nodes(), s1.n_nodes() + s2.n_nodes());
        assert_eq!(b.n_edges(), s1.edges.len() + s2.edges.len());
        assert_eq!(b.targets[1].user, s1.n_nodes());
        assert_eq!(b.unbatch(0), s1);
        assert_eq!(b.unbatch(1), s2);
        assert_eq!(batch(&[]), Err(GraphError::EmptyBatch));
    }

    #[test]
    fn neighbor_cap_is_seeded() {
        let text: String = (0..20).map(|k| format!("u{k},hub,3\nu0,i{k},4\n")).collect();
        let (_, g) = graph(&text);
        let opts = ExtractOptions { max_neighbors: Some(5), seed: 9, ..Default::default() };
        let a = extract_subgraph_with(&g, 0, 0, &opts).unwrap();
        let b = extract_subgraph_with(&g, 0, 0, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_nodes(), 2 + 5 + 5);
    }

    #[test]
    fn debug_json_has_labels() {
        let (_, g) = graph("u,i,5\nu,i2,3\n");
        let j = extract_subgraph(&g, 0, 0).unwrap().to_json();
        assert_eq!(j["nodes"][0]["label"], serde_json::json!([1.0, 0.0, 0.0, 0.0]));
        assert_eq!(j["edges"].as_array().unwrap().len(), 1);
    }
}
