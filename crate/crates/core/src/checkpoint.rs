//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "EDLCKPT\0"
//! version  u32
//! meta_len u32, then meta_len bytes of JSON metadata
//! count    u32
//! count × { name_len u32, name bytes, ndim u32, ndim × u64 dims, f64 payload }
//! ```
//!
//! Values are stored as raw IEEE-754 bit patterns so a round trip is exact.

use std::fs;
use std::path::Path;

use edl_autodiff::{Parameter, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{io_error, CheckpointError};
use crate::loss::EvidenceActivation;
use crate::model::{BackboneSpec, EvidenceModel, TrainMode, TrainingMeta};
use crate::Result;

pub const MAGIC: &[u8; 8] = b"EDLCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    backbone: String,
    input_shape: Vec<usize>,
    class_labels: Vec<u32>,
    activation: EvidenceActivation,
    mode: TrainMode,
    meta: TrainingMeta,
}

pub fn to_bytes(model: &EvidenceModel) -> Vec<u8> {
    let header = Header {
        backbone: model.backbone().to_string(),
        input_shape: model.input_shape().to_vec(),
        class_labels: model.class_labels().to_vec(),
        activation: model.activation,
        mode: model.mode,
        meta: model.meta.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_len(&mut out, json.len());
    out.extend_from_slice(&json);
    put_len(&mut out, model.params().len());
    for p in model.params() {
        put_len(&mut out, p.name.len());
        out.extend_from_slice(p.name.as_bytes());
        put_len(&mut out, p.value.rank());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<EvidenceModel> {
    let mut r = Reader { buf: bytes };
    if r.take(8, "magic").ok() != Some(MAGIC.as_slice()) {
        return Err(CheckpointError::BadMagic.into());
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::Version { found: version, supported: VERSION }.into());
    }
    let meta_len = r.u32("metadata length")? as usize;
    let header: Header = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|e| CheckpointError::Metadata(e.to_string()))?;
    let backbone: BackboneSpec = header
        .backbone
        .parse()
        .map_err(|e: crate::EdlError| CheckpointError::Metadata(e.to_string()))?;

    let count = r.u32("tensor count")? as usize;
    let mut params = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let name_len = r.u32("tensor name")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| CheckpointError::Metadata("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            let d = u64::from_le_bytes(r.take(8, "tensor shape")?.try_into().unwrap());
            shape.push(usize::try_from(d).map_err(|_| CheckpointError::Truncated("tensor shape"))?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(CheckpointError::Truncated("tensor payload"))?;
        let raw = r.take(n.checked_mul(8).ok_or(CheckpointError::Truncated("tensor payload"))?, "tensor payload")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push(Parameter::new(name, Tensor::new(shape, data)?));
    }
    if !r.buf.is_empty() {
        return Err(CheckpointError::Metadata(format!("{} trailing bytes", r.buf.len())).into());
    }
    EvidenceModel::from_parts(
        backbone,
        header.input_shape,
        header.class_labels,
        header.activation,
        header.mode,
        params,
        header.meta,
    )
}

pub fn save(model: &EvidenceModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)).map_err(io_error(path))
}

pub fn load(path: impl AsRef<Path>) -> Result<EvidenceModel> {
    let path = path.as_ref();
    from_bytes(&fs::read(path).map_err(io_error(path))?)
}

/// Loads a checkpoint and checks that it predicts `classes` classes.
pub fn load_expecting(path: impl AsRef<Path>, classes: usize) -> Result<EvidenceModel> {
    let model = load(path)?;
    if model.classes() != classes {
        return Err(CheckpointError::Classes { expected: classes, found: model.classes() }.into());
    }
    Ok(model)
}

fn put_len(out: &mut Vec<u8>, n: usize) {
    out.extend_from_slice(&u32::try_from(n).expect("length fits in u32").to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> std::result::Result<&'a [u8], CheckpointError> {
        if self.buf.len() < n {
            return Err(CheckpointError::Truncated(what));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self, what: &'static str) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}
