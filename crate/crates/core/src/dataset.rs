//! Rating files, five-core filtering, dense indexing and the 60/20/20 split.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TRAIN_FILE: &str = "train.csv";
pub const VALIDATION_FILE: &str = "val.csv";
pub const TEST_FILE: &str = "test.csv";
pub const IDS_FILE: &str = "ids.json";
pub const SPLIT_FILE: &str = "split.json";
pub const STATS_FILE: &str = "stats.json";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("EmptyDataset: {0}")]
    EmptyDataset(String),
    #[error("ParseError at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("RatingOutOfScale at line {line}: {rating} not in [{min}, {max}]")]
    RatingOutOfScale { line: usize, rating: f64, min: f64, max: f64 },
    #[error("DatasetTooSmall: {len} interactions, need at least {needed}")]
    DatasetTooSmall { len: usize, needed: usize },
    #[error("InvalidScale: {0}")]
    InvalidScale(String),
    #[error("MalformedPreparedData: {0}")]
    Malformed(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

/// Closed rating interval, e.g. 1–5 stars.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingScale {
    pub min: f64,
    pub max: f64,
}

impl Default for RatingScale {
    fn default() -> Self {
        RatingScale { min: 1.0, max: 5.0 }
    }
}

impl RatingScale {
    pub fn new(min: f64, max: f64) -> Result<Self, DatasetError> {
        if !(min.is_finite() && max.is_finite() && max > min) {
            return Err(DatasetError::InvalidScale(format!("{min}:{max}")));
        }
        Ok(RatingScale { min, max })
    }

    pub fn contains(&self, rating: f64) -> bool {
        rating >= self.min && rating <= self.max
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    /// Number of discrete rating levels (relation types).
    pub fn levels(&self) -> usize {
        (self.max.round() - self.min.round()) as usize + 1
    }

    /// Relation type in `1..=levels()`: the rating rounded to the nearest
    /// integer level inside the scale.
    pub fn relation(&self, rating: f64) -> usize {
        let lo = self.min.round();
        let level = rating.round().clamp(lo, self.max.round());
        (level - lo) as usize + 1
    }
}

impl FromStr for RatingScale {
    type Err = DatasetError;

    /// Parses `min:max`, e.g. `1:5`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| DatasetError::InvalidScale(format!("expected min:max, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| DatasetError::InvalidScale(format!("bad bound {v:?}")))
        };
        RatingScale::new(parse(a)?, parse(b)?)
    }
}

impl fmt::Display for RatingScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.min, self.max)
    }
}

/// One observed rating with external ids; `timestamp` is -1 when absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingTriple {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    pub timestamp: i64,
}

/// A rating addressed by dense user and item indices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
    pub timestamp: i64,
}

/// Bidirectional mapping between external ids and dense indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IdMap {
    users: Vec<String>,
    items: Vec<String>,
    user_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct IdLists {
    users: Vec<String>,
    items: Vec<String>,
}

impl IdMap {
    pub fn from_lists(users: Vec<String>, items: Vec<String>) -> Result<Self, DatasetError> {
        let user_index: HashMap<_, _> = users.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
        let item_index: HashMap<_, _> = items.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
        if user_index.len() != users.len() || item_index.len() != items.len() {
            return Err(DatasetError::Malformed("duplicate id in id lists".into()));
        }
        Ok(IdMap { users, items, user_index, item_index })
    }

    fn intern_user(&mut self, id: &str) -> usize {
        intern(&mut self.users, &mut self.user_index, id)
    }

    fn intern_item(&mut self, id: &str) -> usize {
        intern(&mut self.items, &mut self.item_index, id)
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn user_id(&self, index: usize) -> &str {
        &self.users[index]
    }

    pub fn item_id(&self, index: usize) -> &str {
        &self.items[index]
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }
}

fn intern(names: &mut Vec<String>, index: &mut HashMap<String, usize>, id: &str) -> usize {
    if let Some(&i) = index.get(id) {
        return i;
    }
    names.push(id.to_string());
    index.insert(id.to_string(), names.len() - 1);
    names.len() - 1
}

/// The observed part of the rating matrix.
///
/// Indices are contiguous from zero and each (user, item) pair appears at
/// most once. Splits of one dataset share a single [`IdMap`].
#[derive(Clone, Debug, PartialEq)]
pub struct RatingDataset {
    interactions: Vec<Interaction>,
    ids: Arc<IdMap>,
    scale: RatingScale,
}

impl RatingDataset {
    pub fn empty(scale: RatingScale) -> Self {
        RatingDataset {
            interactions: Vec::new(),
            ids: Arc::new(IdMap::default()),
            scale,
        }
    }

    /// Indexes triples in order of first appearance, resolving duplicate
    /// (user, item) pairs to the latest timestamp (last occurrence on ties).
    pub fn from_triples(triples: Vec<RatingTriple>, scale: RatingScale) -> Result<Self, DatasetError> {
        let mut ids = IdMap::default();
        let mut slot: HashMap<(usize, usize), usize> = HashMap::new();
        let mut interactions: Vec<Interaction> = Vec::with_capacity(triples.len());
        for (n, t) in triples.into_iter().enumerate() {
            if t.user_id.is_empty() || t.item_id.is_empty() {
                return Err(DatasetError::Parse { line: n + 1, message: "empty id".into() });
            }
            if !scale.contains(t.rating) {
                return Err(DatasetError::RatingOutOfScale {
                    line: n + 1,
                    rating: t.rating,
                    min: scale.min,
                    max: scale.max,
                });
            }
            let user = ids.intern_user(&t.user_id);
            let item = ids.intern_item(&t.item_id);
            let rec = Interaction { user, item, rating: t.rating, timestamp: t.timestamp };
            match slot.get(&(user, item)) {
                Some(&pos) => {
                    if rec.timestamp >= interactions[pos].timestamp {
                        interactions[pos] = rec;
                    }
                }
                None => {
                    slot.insert((user, item), interactions.len());
                    interactions.push(rec);
                }
            }
        }
        Ok(RatingDataset { interactions, ids: Arc::new(ids), scale })
    }

    /// A dataset over an existing id mapping. Indices must be in range.
    pub fn with_ids(interactions: Vec<Interaction>, ids: Arc<IdMap>, scale: RatingScale) -> Self {
        debug_assert!(interactions.iter().all(|x| x.user < ids.n_users() && x.item < ids.n_items()));
        RatingDataset { interactions, ids, scale }
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn ids(&self) -> &Arc<IdMap> {
        &self.ids
    }

    pub fn scale(&self) -> RatingScale {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.ids.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.ids.n_items()
    }

    pub fn triples(&self) -> impl Iterator<Item = RatingTriple> + '_ {
        self.interactions.iter().map(|x| RatingTriple {
            user_id: self.ids.user_id(x.user).to_string(),
            item_id: self.ids.item_id(x.item).to_string(),
            rating: x.rating,
            timestamp: x.timestamp,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for t in self.triples() {
            out.push_str(&format!("{},{},{},{}\n", t.user_id, t.item_id, t.rating, t.timestamp));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        fs::write(path, self.to_csv()).map_err(io_err(path))
    }

    /// Mean rating; `None` when empty.
    pub fn mean_rating(&self) -> Option<f64> {
        if self.is_empty() {
            return None;
        }
        Some(self.interactions.iter().map(|x| x.rating).sum::<f64>() / self.len() as f64)
    }
}

/// Parses delimited rating text. The delimiter (tab or comma) is detected
/// from the first data line; `#` lines and blank lines are skipped. A first
/// data line whose rating field is not numeric is taken as a header.
pub fn parse_ratings(text: &str, scale: RatingScale) -> Result<RatingDataset, DatasetError> {
    let mut delimiter = None;
    let mut triples = Vec::new();
    let mut lines_seen = 0usize;
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let delim = *delimiter.get_or_insert(if line.contains('\t') { '\t' } else { ',' });
        let fields: Vec<&str> = line.split(delim).map(str::trim).collect();
        lines_seen += 1;
        if fields.len() < 3 {
            return Err(DatasetError::Parse {
                line: line_no,
                message: format!("expected at least 3 fields, found {}", fields.len()),
            });
        }
        let rating = match fields[2].parse::<f64>() {
            Ok(r) if r.is_finite() => r,
            _ if lines_seen == 1 => continue,
            _ => {
                return Err(DatasetError::Parse {
                    line: line_no,
                    message: format!("rating {:?} is not a number", fields[2]),
                })
            }
        };
        let timestamp = match fields.get(3) {
            Some(ts) if !ts.is_empty() => ts.parse::<i64>().map_err(|_| DatasetError::Parse {
                line: line_no,
                message: format!("timestamp {ts:?} is not an integer"),
            })?,
            _ => -1,
        };
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(DatasetError::Parse { line: line_no, message: "empty id".into() });
        }
        if !scale.contains(rating) {
            return Err(DatasetError::RatingOutOfScale { line: line_no, rating, min: scale.min, max: scale.max });
        }
        triples.push(RatingTriple {
            user_id: fields[0].to_string(),
            item_id: fields[1].to_string(),
            rating,
            timestamp,
        });
    }
    if triples.is_empty() {
        return Err(DatasetError::EmptyDataset("no valid rows".into()));
    }
    RatingDataset::from_triples(triples, scale)
}

pub fn load_ratings(path: &Path, scale: RatingScale) -> Result<RatingDataset, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_ratings(&text, scale)
}

/// Removes users and items with fewer than `k` interactions until no more
/// can be removed, then re-indexes densely (surviving ids keep their
/// relative order).
pub fn k_core_filter(data: &RatingDataset, k: usize) -> Result<RatingDataset, DatasetError> {
    if data.is_empty() {
        return Err(DatasetError::EmptyDataset("nothing to filter".into()));
    }
    let mut alive = vec![true; data.len()];
    let mut user_deg = vec![0usize; data.n_users()];
    let mut item_deg = vec![0usize; data.n_items()];
    for x in data.interactions() {
        user_deg[x.user] += 1;
        item_deg[x.item] += 1;
    }
    loop {
        let mut changed = false;
        for (pos, x) in data.interactions().iter().enumerate() {
            if alive[pos] && (user_deg[x.user] < k || item_deg[x.item] < k) {
                alive[pos] = false;
                user_deg[x.user] -= 1;
                item_deg[x.item] -= 1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let kept: Vec<Interaction> = data
        .interactions()
        .iter()
        .zip(&alive)
        .filter_map(|(x, &a)| a.then_some(*x))
        .collect();
    if kept.is_empty() {
        return Err(DatasetError::EmptyDataset(format!("{k}-core filtering removed every interaction")));
    }
    reindex(data, kept)
}

pub fn five_core_filter(data: &RatingDataset) -> Result<RatingDataset, DatasetError> {
    k_core_filter(data, 5)
}

fn reindex(data: &RatingDataset, kept: Vec<Interaction>) -> Result<RatingDataset, DatasetError> {
    let mut user_new = vec![usize::MAX; data.n_users()];
    let mut item_new = vec![usize::MAX; data.n_items()];
    for x in &kept {
        user_new[x.user] = 0;
        item_new[x.item] = 0;
    }
    let mut users = Vec::new();
    for (old, slot) in user_new.iter_mut().enumerate() {
        if *slot == 0 {
            *slot = users.len();
            users.push(data.ids.user_id(old).to_string());
        }
    }
    let mut items = Vec::new();
    for (old, slot) in item_new.iter_mut().enumerate() {
        if *slot == 0 {
            *slot = items.len();
            items.push(data.ids.item_id(old).to_string());
        }
    }
    let interactions = kept
        .into_iter()
        .map(|x| Interaction { user: user_new[x.user], item: item_new[x.item], ..x })
        .collect();
    Ok(RatingDataset {
        interactions,
        ids: Arc::new(IdMap::from_lists(users, items)?),
        scale: data.scale,
    })
}

/// Train / validation / test parts over one shared id mapping.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train: RatingDataset,
    pub validation: RatingDataset,
    pub test: RatingDataset,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct SplitMeta {
    seed: u64,
    scale: RatingScale,
}

/// Seeded uniform shuffle followed by a contiguous cut: validation and test
/// each get ⌊n/5⌋ interactions and training the remainder.
pub fn split(data: &RatingDataset, seed: u64) -> Result<SplitDataset, DatasetError> {
    const MIN_LEN: usize = 5;
    if data.len() < MIN_LEN {
        return Err(DatasetError::DatasetTooSmall { len: data.len(), needed: MIN_LEN });
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = data.len();
    let held = n / 5;
    let n_train = n - 2 * held;
    let take = |range: std::ops::Range<usize>| {
        let xs = order[range].iter().map(|&p| data.interactions[p]).collect();
        RatingDataset::with_ids(xs, data.ids.clone(), data.scale)
    };
    Ok(SplitDataset {
        train: take(0..n_train),
        validation: take(n_train..n_train + held),
        test: take(n_train + held..n),
        seed,
    })
}

impl SplitDataset {
    pub fn ids(&self) -> &Arc<IdMap> {
        self.train.ids()
    }

    pub fn scale(&self) -> RatingScale {
        self.train.scale()
    }

    /// All three parts as one dataset.
    pub fn combined(&self) -> RatingDataset {
        let xs = self
            .train
            .interactions()
            .iter()
            .chain(self.validation.interactions())
            .chain(self.test.interactions())
            .copied()
            .collect();
        RatingDataset::with_ids(xs, self.ids().clone(), self.scale())
    }

    /// Writes the three parts as CSV plus the id lists, split metadata and
    /// statistics of the combined data.
    pub fn save_dir(&self, dir: &Path) -> Result<(), DatasetError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        self.train.save(&dir.join(TRAIN_FILE))?;
        self.validation.save(&dir.join(VALIDATION_FILE))?;
        self.test.save(&dir.join(TEST_FILE))?;
        let ids = IdLists { users: self.ids().users.clone(), items: self.ids().items.clone() };
        write_json(&dir.join(IDS_FILE), &ids)?;
        write_json(&dir.join(SPLIT_FILE), &SplitMeta { seed: self.seed, scale: self.scale() })?;
        write_json(&dir.join(STATS_FILE), &dataset_stats(&self.combined()))?;
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<SplitDataset, DatasetError> {
        let meta: SplitMeta = read_json(&dir.join(SPLIT_FILE))?;
        let lists: IdLists = read_json(&dir.join(IDS_FILE))?;
        let ids = Arc::new(IdMap::from_lists(lists.users, lists.items)?);
        let part = |name: &str| -> Result<RatingDataset, DatasetError> {
            let path = dir.join(name);
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let mut xs = Vec::new();
            for (n, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let f: Vec<&str> = line.split(',').collect();
                let bad = |m: &str| DatasetError::Parse { line: n + 1, message: format!("{name}: {m}") };
                if f.len() != 4 {
                    return Err(bad("expected 4 fields"));
                }
                let user = ids.user_index(f[0]).ok_or_else(|| bad("unknown user"))?;
                let item = ids.item_index(f[1]).ok_or_else(|| bad("unknown item"))?;
                let rating = f[2].parse().map_err(|_| bad("bad rating"))?;
                let timestamp = f[3].parse().map_err(|_| bad("bad timestamp"))?;
                xs.push(Interaction { user, item, rating, timestamp });
            }
            Ok(RatingDataset::with_ids(xs, ids.clone(), meta.scale))
        };
        Ok(SplitDataset {
            train: part(TRAIN_FILE)?,
            validation: part(VALIDATION_FILE)?,
            test: part(TEST_FILE)?,
            seed: meta.seed,
        })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| DatasetError::Malformed(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Malformed(format!("{}: {e}", path.display())))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub density: f64,
}

/// Counts users and items that occur in `data` (not the size of a shared
/// id mapping) and the resulting density.
pub fn dataset_stats(data: &RatingDataset) -> DatasetStats {
    let mut users = vec![false; data.n_users()];
    let mut items = vec![false; data.n_items()];
    for x in data.interactions() {
        users[x.user] = true;
        items[x.item] = true;
    }
    let users = users.iter().filter(|&&b| b).count();
    let items = items.iter().filter(|&&b| b).count();
    let cells = users * items;
    DatasetStats {
        users,
        items,
        interactions: data.len(),
        density: if cells == 0 { 0.0 } else { data.len() as f64 / cells as f64 },
    }
}
