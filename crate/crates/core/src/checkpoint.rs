//! Binary checkpoints: a JSON manifest followed by named `f32` arrays.
//!
//! Layout: the 8-byte magic `URBPCKPT`, the manifest length as a
//! little-endian `u64`, the manifest as UTF-8 JSON, then every array's
//! values as little-endian `f32` in row-major order. The manifest lists each
//! array's name, section, shape and element offset, plus a free-form `meta`
//! object.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::TransRState;
use crate::pretrain::{ModelState, PretrainConfig};
use crate::schema::EdgeType;
use crate::tape::{Mat, ParamStore};

const MAGIC: &[u8; 8] = b"URBPCKPT";
const FORMAT_VERSION: u32 = 1;

/// Sections a parameter name can fall into, matched by name prefix.
pub const SECTIONS: [&str; 8] = [
    "transr",
    "encoder",
    "readout",
    "flow_encoder",
    "image_proj",
    "fusion",
    "decoders",
    "prompt",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub section: String,
    pub shape: [usize; 2],
    /// Offset into the data block, in elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub arrays: Vec<ArrayEntry>,
    pub meta: serde_json::Value,
}

/// Named 2-D arrays plus metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub arrays: BTreeMap<String, Mat>,
}

/// Section of a parameter name: its first dot-separated component when that
/// is a known section.
pub fn section_of(name: &str) -> Result<&'static str> {
    let head = name.split('.').next().unwrap_or(name);
    SECTIONS
        .iter()
        .find(|s| **s == head)
        .copied()
        .ok_or_else(|| Error::Checkpoint(format!("parameter `{name}` belongs to no section")))
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            arrays: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) -> Result<()> {
        let name = name.into();
        section_of(&name)?;
        if self.arrays.insert(name.clone(), value).is_some() {
            return Err(Error::Checkpoint(format!("duplicate array `{name}`")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Mat> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing array `{name}`")))
    }

    /// Sections present, in canonical order.
    pub fn sections(&self) -> Vec<&'static str> {
        SECTIONS
            .iter()
            .copied()
            .filter(|s| self.arrays.keys().any(|k| section_of(k).ok() == Some(*s)))
            .collect()
    }

    pub fn manifest(&self) -> Manifest {
        let mut offset = 0;
        let arrays = self
            .arrays
            .iter()
            .map(|(name, m)| {
                let e = ArrayEntry {
                    name: name.clone(),
                    section: section_of(name).expect("checked on insert").to_string(),
                    shape: [m.nrows(), m.ncols()],
                    offset,
                };
                offset += m.len();
                e
            })
            .collect();
        Manifest {
            version: FORMAT_VERSION,
            arrays,
            meta: self.meta.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest()).expect("manifest serializes");
        let total: usize = self.arrays.values().map(|m| m.len()).sum();
        let mut out = Vec::with_capacity(16 + manifest.len() + 4 * total);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for m in self.arrays.values() {
            for &x in m.iter() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16 + len)
            .ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest =
            serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
        if manifest.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                manifest.version
            )));
        }
        let data = &bytes[16 + len..];
        let mut arrays = BTreeMap::new();
        for e in &manifest.arrays {
            let n = e.shape[0] * e.shape[1];
            let raw = data
                .get(4 * e.offset..4 * (e.offset + n))
                .ok_or_else(|| Error::Checkpoint(format!("array `{}` is truncated", e.name)))?;
            let values: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            let m = Mat::from_shape_vec((e.shape[0], e.shape[1]), values).expect("shape matches length");
            arrays.insert(e.name.clone(), m);
        }
        Ok(Self {
            meta: manifest.meta,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Copies every store parameter in.
    pub fn insert_store(&mut self, store: &ParamStore) -> Result<()> {
        for (_, name, value) in store.iter() {
            self.insert(name, value.clone())?;
        }
        Ok(())
    }

    /// Overwrites every store parameter from the checkpoint, checking shapes.
    pub fn fill_store(&self, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let src = self.get(&name)?;
            let dst = store.get_mut(id);
            if src.dim() != dst.dim() {
                return Err(Error::Checkpoint(format!(
                    "array `{name}` has shape {:?}, expected {:?}",
                    src.dim(),
                    dst.dim()
                )));
            }
            dst.assign(src);
        }
        Ok(())
    }
}

/// Metadata stored with a pretrained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: u64,
    pub config_hash: String,
    pub views: String,
    pub config: PretrainConfig,
    pub intervals: usize,
    pub image_dim: usize,
    pub node_ids: Vec<String>,
}

fn transr_into(ck: &mut Checkpoint, state: &TransRState) -> Result<()> {
    ck.insert("transr.entities", state.entities.clone())?;
    ck.insert("transr.relations", state.relations.clone())?;
    for (t, m) in EdgeType::ALL.iter().zip(&state.projections) {
        ck.insert(format!("transr.projection.{t}"), m.clone())?;
    }
    Ok(())
}

fn transr_from(ck: &Checkpoint, node_ids: Vec<String>, dim: usize) -> Result<TransRState> {
    let entities = ck.get("transr.entities")?.clone();
    let relations = ck.get("transr.relations")?.clone();
    if entities.dim() != (node_ids.len(), dim) || relations.dim() != (EdgeType::COUNT, dim) {
        return Err(Error::Checkpoint("transr arrays disagree with the manifest".into()));
    }
    let projections = EdgeType::ALL
        .iter()
        .map(|t| ck.get(&format!("transr.projection.{t}")).cloned())
        .collect::<Result<Vec<_>>>()?;
    Ok(TransRState {
        dim,
        node_ids,
        entities,
        relations,
        projections,
    })
}

/// Saves the TransR tables alone (the `init-kg` artifact).
pub fn save_transr(state: &TransRState, path: &Path, meta: serde_json::Value) -> Result<()> {
    let mut meta = meta;
    meta["node_ids"] = serde_json::to_value(&state.node_ids).expect("ids serialize");
    let mut ck = Checkpoint::new(meta);
    transr_into(&mut ck, state)?;
    ck.save(path)
}

pub fn load_transr(path: &Path) -> Result<TransRState> {
    let ck = Checkpoint::load(path)?;
    let ids: Vec<String> = serde_json::from_value(ck.meta["node_ids"].clone())
        .map_err(|e| Error::Checkpoint(format!("node_ids: {e}")))?;
    let dim = ck.get("transr.entities")?.ncols();
    transr_from(&ck, ids, dim)
}

pub fn model_checkpoint(model: &ModelState, config_hash: &str) -> Result<Checkpoint> {
    let meta = ModelMeta {
        seed: model.seed,
        config_hash: config_hash.to_string(),
        views: model.config.views.label(),
        config: model.config.clone(),
        intervals: model.intervals,
        image_dim: model.image_dim,
        node_ids: model.features.node_ids.clone(),
    };
    let mut ck = Checkpoint::new(serde_json::to_value(meta).expect("meta serializes"));
    transr_into(&mut ck, &model.features)?;
    ck.insert_store(&model.store)?;
    Ok(ck)
}

pub fn save_model(model: &ModelState, path: &Path, config_hash: &str) -> Result<()> {
    model_checkpoint(model, config_hash)?.save(path)
}

pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<ModelState> {
    let meta: ModelMeta = serde_json::from_value(ck.meta.clone())
        .map_err(|e| Error::Checkpoint(format!("model meta: {e}")))?;
    let features = transr_from(ck, meta.node_ids, meta.config.dim())?;
    let mut model = ModelState::assemble(
        &meta.config,
        meta.seed,
        features,
        meta.intervals,
        meta.image_dim,
    )?;
    ck.fill_store(&mut model.store)?;
    Ok(model)
}

/// Loads a model and returns it with the config hash it was saved under.
pub fn load_model(path: &Path) -> Result<(ModelState, String)> {
    let ck = Checkpoint::load(path)?;
    let hash = ck.meta["config_hash"].as_str().unwrap_or_default().to_string();
    Ok((model_from_checkpoint(&ck)?, hash))
}
