//! `DTC1` tensor container.
//!
//! Header: `{"metadata": {..}, "name": "..", "tensors": {name: {"dtype":
//! "f32", "offset": .., "length": .., "shape": [..]}}}`. Tensor bytes are raw
//! little-endian `f32`, each tensor starting on a 64-byte boundary of the
//! file; the payload itself starts at the first 64-byte boundary after the
//! header. Offsets are relative to the payload start.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    ensure_canonical, frame, get_f32s, header_bytes, put_f32s, section, unframe, write_atomic,
};
use crate::checkpoint::ModelCheckpoint;
use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

pub const MAGIC: &[u8; 4] = b"DTC1";
pub const ALIGN: usize = 64;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    metadata: BTreeMap<String, String>,
    name: String,
    tensors: BTreeMap<String, Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    dtype: String,
    length: u64,
    offset: u64,
    shape: Vec<u64>,
}

fn align(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

pub fn encode(ckpt: &ModelCheckpoint) -> Result<Vec<u8>> {
    let mut tensors = BTreeMap::new();
    let mut offset = 0usize;
    for (name, t) in &ckpt.tensors {
        let shape = if ckpt.is_vector(name) {
            if t.rows() != 1 {
                return Err(Error::structure(
                    name.as_str(),
                    "vector tensor must have one row",
                ));
            }
            vec![t.cols() as u64]
        } else {
            vec![t.rows() as u64, t.cols() as u64]
        };
        let length = 4 * t.len();
        tensors.insert(
            name.clone(),
            Entry {
                dtype: "f32".into(),
                length: length as u64,
                offset: offset as u64,
                shape,
            },
        );
        offset = align(offset + length);
    }
    let header = header_bytes(&Header {
        metadata: ckpt.metadata.clone(),
        name: ckpt.name.clone(),
        tensors,
    })?;
    let mut out = frame(MAGIC, &header);
    out.resize(align(out.len()), 0);
    let payload_start = out.len();
    for t in ckpt.tensors.values() {
        out.resize(payload_start + align(out.len() - payload_start), 0);
        put_f32s(&mut out, t.data());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<ModelCheckpoint> {
    let (header, rest): (Header, _) = unframe(MAGIC, bytes)?;
    let payload_start = align(bytes.len() - rest.len());
    let payload = bytes
        .get(payload_start..)
        .ok_or_else(|| Error::Corrupt("payload missing".into()))?;
    let mut ckpt = ModelCheckpoint::new(header.name);
    ckpt.metadata = header.metadata;
    let mut spans = Vec::with_capacity(header.tensors.len());
    for (name, e) in header.tensors {
        if e.dtype != "f32" {
            return Err(Error::Corrupt(format!(
                "tensor `{name}`: unsupported dtype `{}`",
                e.dtype
            )));
        }
        let dims: Vec<usize> = e.shape.iter().map(|&d| d as usize).collect();
        let (rows, cols, vector) = match dims[..] {
            [n] => (1, n, true),
            [r, c] => (r, c, false),
            _ => {
                return Err(Error::Corrupt(format!(
                    "tensor `{name}`: only 1-D and 2-D tensors are supported"
                )))
            }
        };
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .filter(|&n| n as u64 == e.length)
            .ok_or_else(|| {
                Error::Corrupt(format!("tensor `{name}`: length does not match shape"))
            })?;
        let data = get_f32s(section(payload, e.offset, len, &name)?);
        spans.push((e.offset, e.offset + e.length, name.clone()));
        let m = DenseMatrix::new(rows, cols, data)
            .map_err(|err| Error::Corrupt(format!("tensor `{name}`: {err}")))?;
        if !m.is_finite() {
            return Err(Error::NonFinite(format!("tensor `{name}`")));
        }
        if vector {
            ckpt.vectors.insert(name.clone());
        }
        ckpt.tensors.insert(name, m);
    }
    spans.sort();
    if let Some(w) = spans.windows(2).find(|w| w[0].1 > w[1].0) {
        return Err(Error::Corrupt(format!(
            "tensors `{}` and `{}` overlap",
            w[0].2, w[1].2
        )));
    }
    ensure_canonical(bytes, &encode(&ckpt)?)?;
    Ok(ckpt)
}

pub fn read(path: &Path) -> Result<ModelCheckpoint> {
    decode(&fs::read(path)?)
}

pub fn write(path: &Path, ckpt: &ModelCheckpoint) -> Result<()> {
    write_atomic(path, &encode(ckpt)?)
}

/// Reads a file holding a single tensor named `X`.
pub fn read_inputs(path: &Path) -> Result<DenseMatrix> {
    let mut ckpt = read(path)?;
    ckpt.tensors
        .remove("X")
        .ok_or_else(|| Error::structure("X", format!("missing from `{}`", path.display())))
}

pub fn write_inputs(path: &Path, x: &DenseMatrix) -> Result<()> {
    let mut ckpt = ModelCheckpoint::new("inputs");
    ckpt.insert("X", x.clone());
    write(path, &ckpt)
}
