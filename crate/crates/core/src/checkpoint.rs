//! Flat named-tensor checkpoints.
//!
//! Layout, all integers little-endian:
//! `CGCK` magic, `u32` version, `u32` metadata length and that many bytes of
//! JSON metadata, `u32` tensor count, then per tensor a `u32` name length,
//! the UTF-8 name, a `u32` rank, `u64` dims and row-major `f64` values.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::concept::ConceptConfig;
use crate::numerics::{ParamStore, Tensor};
use crate::policy::{Model, PolicyConfig};

pub const MAGIC: &[u8; 4] = b"CGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub concept: ConceptConfig,
    pub policy: PolicyConfig,
    /// Last completed training stage.
    pub stage: u8,
    pub seed: u64,
    /// Backbone layer that supplied the hidden states. Unused by the toy
    /// encoder.
    pub layer: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("not a checkpoint: {0}")]
    Format(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("tensor {name}: checkpoint shape {found:?}, config expects {expected:?}")]
    Shape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("tensor {0} missing from checkpoint")]
    Missing(String),
    #[error("tensor {0} in checkpoint is not part of the model")]
    Unexpected(String),
}

pub fn to_bytes(meta: &CheckpointMeta, params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let m = serde_json::to_vec(meta).expect("metadata serializes");
    out.extend_from_slice(&(m.len() as u32).to_le_bytes());
    out.extend_from_slice(&m);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        if self.buf.len() < n {
            return Err(CheckpointError::Format("truncated".into()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(CheckpointMeta, ParamStore), CheckpointError> {
    let mut r = Reader { buf: bytes };
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let n = r.u32()? as usize;
    let meta: CheckpointMeta =
        serde_json::from_slice(r.take(n)?).map_err(|e| CheckpointError::Format(format!("metadata: {e}")))?;
    let count = r.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| CheckpointError::Format("tensor name".into()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let len = len.filter(|&l| l <= r.buf.len() / 8).ok_or_else(|| CheckpointError::Format(format!("tensor {name} overruns the file")))?;
        let data = r.take(len * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Format(format!("tensor {name}: {e}")))?;
        params.insert(name, t);
    }
    if !r.buf.is_empty() {
        return Err(CheckpointError::Format("trailing bytes".into()));
    }
    Ok((meta, params))
}

pub fn save(path: &Path, meta: &CheckpointMeta, params: &ParamStore) -> Result<(), CheckpointError> {
    let io_err = |source| CheckpointError::Io { path: path.display().to_string(), source };
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(&to_bytes(meta, params)).map_err(io_err)
}

pub fn load(path: &Path) -> Result<(CheckpointMeta, ParamStore), CheckpointError> {
    let io_err = |source| CheckpointError::Io { path: path.display().to_string(), source };
    let mut buf = Vec::new();
    fs::File::open(path).map_err(io_err)?.read_to_end(&mut buf).map_err(io_err)?;
    from_bytes(&buf)
}

/// Checks `params` against the tensors a model with the given configs would
/// have, naming the first tensor that differs.
pub fn check_shapes(concept: &ConceptConfig, policy: &PolicyConfig, params: &ParamStore) -> Result<(), CheckpointError> {
    let fresh = Model::init(concept.clone(), policy.clone(), 0)
        .map_err(|e| CheckpointError::Format(e.to_string()))?
        .params;
    for (name, t) in fresh.iter() {
        match params.get(name) {
            None => return Err(CheckpointError::Missing(name.clone())),
            Some(p) if p.shape() != t.shape() => {
                return Err(CheckpointError::Shape { name: name.clone(), expected: t.shape().to_vec(), found: p.shape().to_vec() })
            }
            Some(_) => {}
        }
    }
    if let Some(extra) = params.names().find(|n| fresh.get(n).is_none()) {
        return Err(CheckpointError::Unexpected(extra.clone()));
    }
    Ok(())
}

/// Builds a model from checkpointed parameters under the given configs.
pub fn into_model(concept: ConceptConfig, policy: PolicyConfig, params: ParamStore) -> Result<Model, CheckpointError> {
    check_shapes(&concept, &policy, &params)?;
    Ok(Model { concept, policy, params })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(model: &Model) -> CheckpointMeta {
        CheckpointMeta { concept: model.concept.clone(), policy: model.policy.clone(), stage: 1, seed: 42, layer: None }
    }

    #[test]
    fn round_trip_is_exact() {
        let model = Model::init(ConceptConfig::default(), PolicyConfig::default(), 5).unwrap();
        let bytes = to_bytes(&meta(&model), &model.params);
        let (m, p) = from_bytes(&bytes).unwrap();
        assert_eq!(m, meta(&model));
        assert_eq!(p, model.params);
        assert_eq!(to_bytes(&m, &p), bytes);
    }

    #[test]
    fn shape_mismatch_names_tensor() {
        let small = Model::init(ConceptConfig { queries: 4, ..ConceptConfig::default() }, PolicyConfig::default(), 1).unwrap();
        let err = into_model(ConceptConfig::default(), PolicyConfig::default(), small.params).unwrap_err();
        match err {
            CheckpointError::Shape { name, .. } => assert!(name.starts_with("ctm.") || name.starts_with("mask."), "{name}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let model = Model::init(ConceptConfig::default(), PolicyConfig::default(), 5).unwrap();
        let bytes = to_bytes(&meta(&model), &model.params);
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 3]), Err(CheckpointError::Format(_))));
        assert!(matches!(from_bytes(b"XXXX"), Err(CheckpointError::Format(_))));
        let mut v = bytes.clone();
        v[4] = 9;
        assert!(matches!(from_bytes(&v), Err(CheckpointError::Version(9))));
        let mut v = bytes;
        v.push(0);
        assert!(matches!(from_bytes(&v), Err(CheckpointError::Format(_))));
    }
}
