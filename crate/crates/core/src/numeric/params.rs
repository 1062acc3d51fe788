use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NumericError, Tape, Tensor, Var};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    /// Whether decoupled weight decay applies to this tensor.
    pub decay: bool,
}

/// Named trainable tensors, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    weight_decay: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    params: BTreeMap<String, ManifestEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, decay: bool) {
        self.entries.insert(name.into(), Param { value, decay });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|p| &p.value)
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    /// Moves entries of `other` into `self`.
    pub fn extend(&mut self, other: ParamStore) {
        self.entries.extend(other.entries);
    }

    /// Records every parameter as a gradient-requiring leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars = self
            .entries
            .iter()
            .map(|(k, p)| (k.clone(), tape.param(p.value.clone())))
            .collect();
        BoundParams { vars }
    }

    /// Records every parameter as a constant leaf (no gradients).
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundParams {
        let vars = self
            .entries
            .iter()
            .map(|(k, p)| (k.clone(), tape.constant(p.value.clone())))
            .collect();
        BoundParams { vars }
    }

    /// Writes `manifest.json` and a little-endian `params.bin` into `dir`.
    pub fn save(&self, dir: &Path, metadata: serde_json::Value) -> Result<(), NumericError> {
        fs::create_dir_all(dir)?;
        let mut bytes = Vec::with_capacity(self.num_elements() * 8);
        let mut params = BTreeMap::new();
        for (name, p) in &self.entries {
            params.insert(
                name.clone(),
                ManifestEntry {
                    shape: p.value.shape().to_vec(),
                    dtype: "f64".into(),
                    offset: bytes.len(),
                    weight_decay: p.decay,
                },
            );
            for v in p.value.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest { params, metadata };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| NumericError::MalformedCheckpoint(e.to_string()))?;
        fs::write(dir.join(MANIFEST_FILE), text)?;
        fs::write(dir.join(PARAMS_FILE), bytes)?;
        Ok(())
    }

    /// Inverse of [`ParamStore::save`]; returns the stored metadata too.
    pub fn load(dir: &Path) -> Result<(ParamStore, serde_json::Value), NumericError> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| NumericError::MalformedCheckpoint(e.to_string()))?;
        let bytes = fs::read(dir.join(PARAMS_FILE))?;
        let mut store = ParamStore::new();
        for (name, entry) in manifest.params {
            if entry.dtype != "f64" {
                return Err(NumericError::MalformedCheckpoint(format!("{name}: dtype {}", entry.dtype)));
            }
            let count: usize = entry.shape.iter().product();
            let end = entry.offset + count * 8;
            if end > bytes.len() {
                return Err(NumericError::MalformedCheckpoint(format!("{name}: data past end of file")));
            }
            let data = bytes[entry.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            store.insert(name, Tensor::new(entry.shape, data)?, entry.weight_decay);
        }
        Ok((store, manifest.metadata))
    }
}

/// Tape handles for a [`ParamStore`].
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl FromIterator<(String, Var)> for BoundParams {
    fn from_iter<I: IntoIterator<Item = (String, Var)>>(iter: I) -> Self {
        BoundParams { vars: iter.into_iter().collect() }
    }
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var, NumericError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| NumericError::MissingParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
