//! `DDQ1` compressed-delta artifact.
//!
//! The header carries the compression settings and one entry per layer.
//! Quantized layers list their parts; each part occupies three consecutive
//! payload sections: row offsets (`u32` LE, `rows + 1` of them), column
//! indices (`u32` LE), and codes packed at `k − log2 m` bits, LSB first.
//! Layers appear in the payload in name order, parts in part order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    ensure_canonical, frame, get_f32s, get_u32s, header_bytes, put_f32s, put_u32s, section,
    unframe, write_atomic,
};
use crate::artifact::{DqArtifact, DqConfig, LayerArtifact, Method};
use crate::bitpack::{packed_len, PackedCodes};
use crate::error::{Error, Result};
use crate::quant::{QuantParams, QuantPart, QuantScale, QuantizedDelta};
use crate::tensor::{CsrMatrix, DenseMatrix};

pub const MAGIC: &[u8; 4] = b"DDQ1";
pub const INDEX_BITS: u32 = 32;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ConfigEntry,
    index_bits: u32,
    layers: BTreeMap<String, LayerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigEntry {
    alpha: f64,
    base_name: String,
    baseline_bits: u32,
    group_size: Option<u64>,
    k: Option<u8>,
    m: Option<u32>,
    method: String,
    name: String,
    probe_k: Option<String>,
    probe_q: Option<String>,
    seed: u64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    kind: String,
    shape: [u64; 2],
    stored: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quant: Option<QuantEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    row_offsets: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    col_indices: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vector: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuantEntry {
    /// The stored constant when every quantized value was equal.
    constant: Option<f64>,
    k: u8,
    m: u32,
    parts: Vec<PartEntry>,
    scale: f64,
    zero_point: i32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartEntry {
    codes: u64,
    col_indices: u64,
    row_offsets: u64,
    stored: u64,
    width: u8,
}

fn encode_config(c: &DqConfig) -> ConfigEntry {
    ConfigEntry {
        alpha: c.alpha,
        base_name: c.base_name.clone(),
        baseline_bits: c.baseline_bits,
        group_size: c.group_size.map(|g| g as u64),
        k: c.k,
        m: c.m,
        method: c.method.as_str().into(),
        name: c.name.clone(),
        probe_k: c.probe_k.clone(),
        probe_q: c.probe_q.clone(),
        seed: c.seed,
    }
}

fn decode_config(c: ConfigEntry) -> Result<DqConfig> {
    Ok(DqConfig {
        method: Method::parse(&c.method).map_err(|e| Error::Corrupt(e.to_string()))?,
        alpha: c.alpha,
        group_size: c.group_size.map(|g| g as usize),
        seed: c.seed,
        k: c.k,
        m: c.m,
        baseline_bits: c.baseline_bits,
        probe_q: c.probe_q,
        probe_k: c.probe_k,
        base_name: c.base_name,
        name: c.name,
    })
}

pub fn encode(artifact: &DqArtifact) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let mut layers = BTreeMap::new();
    for (name, layer) in &artifact.layers {
        let (rows, cols) = layer.shape();
        let mut entry = LayerEntry {
            kind: layer.kind().into(),
            shape: [rows as u64, cols as u64],
            stored: layer.stored_entries() as u64,
            ..Default::default()
        };
        match layer {
            LayerArtifact::Quantized(q) => {
                let p = q.params();
                let mut parts = Vec::with_capacity(q.parts().len());
                for part in q.parts() {
                    let row_offsets = payload.len() as u64;
                    put_u32s(&mut payload, part.row_offsets())?;
                    let col_indices = payload.len() as u64;
                    put_u32s(&mut payload, part.col_indices())?;
                    let codes = payload.len() as u64;
                    payload.extend_from_slice(part.codes().bytes());
                    parts.push(PartEntry {
                        codes,
                        col_indices,
                        row_offsets,
                        stored: part.nnz() as u64,
                        width: part.codes().width(),
                    });
                }
                entry.quant = Some(QuantEntry {
                    constant: p.quant.constant.map(f64::from),
                    k: p.quant.k,
                    m: p.parts,
                    parts,
                    scale: f64::from(p.quant.scale),
                    zero_point: p.quant.zero_point,
                });
            }
            LayerArtifact::Empty { .. } => {}
            LayerArtifact::Sparse(s) => {
                entry.row_offsets = Some(payload.len() as u64);
                put_u32s(&mut payload, s.row_offsets())?;
                entry.col_indices = Some(payload.len() as u64);
                put_u32s(&mut payload, s.col_indices())?;
                entry.values = Some(payload.len() as u64);
                put_f32s(&mut payload, s.values());
            }
            LayerArtifact::Dense { values, vector } => {
                entry.values = Some(payload.len() as u64);
                entry.vector = Some(*vector);
                put_f32s(&mut payload, values.data());
            }
        }
        layers.insert(name.clone(), entry);
    }
    let header = header_bytes(&Header {
        config: encode_config(&artifact.config),
        index_bits: INDEX_BITS,
        layers,
    })?;
    let mut out = frame(MAGIC, &header);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn required(v: Option<u64>, layer: &str, what: &str) -> Result<u64> {
    v.ok_or_else(|| Error::Corrupt(format!("layer `{layer}`: missing `{what}` offset")))
}

fn decode_layer(name: &str, e: LayerEntry, payload: &[u8]) -> Result<LayerArtifact> {
    let rows = e.shape[0] as usize;
    let cols = e.shape[1] as usize;
    let stored = e.stored as usize;
    let corrupt = |err: Error| Error::Corrupt(format!("layer `{name}`: {err}"));
    let index_len = |n: usize| {
        n.checked_mul(4)
            .ok_or_else(|| Error::Corrupt("size overflow".into()))
    };
    let layer = match e.kind.as_str() {
        "quantized" => {
            let q = e
                .quant
                .ok_or_else(|| Error::Corrupt(format!("layer `{name}`: missing quantizer")))?;
            let scale = QuantScale {
                k: q.k,
                scale: q.scale as f32,
                zero_point: q.zero_point,
                constant: q.constant.map(|c| c as f32),
            };
            let params = QuantParams::new(scale, q.m).map_err(corrupt)?;
            let mut parts = Vec::with_capacity(q.parts.len());
            for p in q.parts {
                let n = p.stored as usize;
                let ro = get_u32s(section(payload, p.row_offsets, index_len(rows + 1)?, name)?);
                let ci = get_u32s(section(payload, p.col_indices, index_len(n)?, name)?);
                let code_bytes = section(payload, p.codes, packed_len(n, p.width), name)?;
                let codes = PackedCodes::from_bytes(code_bytes.to_vec(), n, p.width)?;
                parts.push(QuantPart::new(rows, cols, ro, ci, codes).map_err(corrupt)?);
            }
            let q = QuantizedDelta::from_parts(rows, cols, params, parts).map_err(corrupt)?;
            if q.nnz() != stored {
                return Err(Error::Corrupt(format!(
                    "layer `{name}`: stored count mismatch"
                )));
            }
            LayerArtifact::Quantized(q)
        }
        "empty" => LayerArtifact::Empty { rows, cols },
        "sparse" => {
            let ro = get_u32s(section(
                payload,
                required(e.row_offsets, name, "row_offsets")?,
                index_len(rows + 1)?,
                name,
            )?);
            let ci = get_u32s(section(
                payload,
                required(e.col_indices, name, "col_indices")?,
                index_len(stored)?,
                name,
            )?);
            let vals = get_f32s(section(
                payload,
                required(e.values, name, "values")?,
                index_len(stored)?,
                name,
            )?);
            let s = CsrMatrix::new(rows, cols, ro, ci, vals).map_err(corrupt)?;
            if !s.is_finite() {
                return Err(Error::NonFinite(format!("layer `{name}`")));
            }
            LayerArtifact::Sparse(s)
        }
        "dense" => {
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Corrupt("size overflow".into()))?;
            let vals = get_f32s(section(
                payload,
                required(e.values, name, "values")?,
                index_len(n)?,
                name,
            )?);
            let values = DenseMatrix::new(rows, cols, vals).map_err(corrupt)?;
            if !values.is_finite() {
                return Err(Error::NonFinite(format!("layer `{name}`")));
            }
            LayerArtifact::Dense {
                values,
                vector: e.vector.unwrap_or(false),
            }
        }
        other => {
            return Err(Error::Corrupt(format!(
                "layer `{name}`: unknown kind `{other}`"
            )))
        }
    };
    if layer.stored_entries() != stored {
        return Err(Error::Corrupt(format!(
            "layer `{name}`: stored count mismatch"
        )));
    }
    Ok(layer)
}

pub fn decode(bytes: &[u8]) -> Result<DqArtifact> {
    let (header, payload): (Header, _) = unframe(MAGIC, bytes)?;
    if header.index_bits != INDEX_BITS {
        return Err(Error::Corrupt(format!(
            "unsupported index width {}",
            header.index_bits
        )));
    }
    let config = decode_config(header.config)?;
    let mut layers = BTreeMap::new();
    for (name, entry) in header.layers {
        let layer = decode_layer(&name, entry, payload)?;
        if let LayerArtifact::Quantized(q) = &layer {
            // cross-part overlap check
            crate::quant::dequantize(q)
                .map_err(|e| Error::Corrupt(format!("layer `{name}`: {e}")))?;
        }
        layers.insert(name, layer);
    }
    let artifact = DqArtifact { config, layers };
    ensure_canonical(bytes, &encode(&artifact)?)?;
    Ok(artifact)
}

pub fn read(path: &Path) -> Result<DqArtifact> {
    decode(&fs::read(path)?)
}

pub fn write(path: &Path, artifact: &DqArtifact) -> Result<()> {
    write_atomic(path, &encode(artifact)?)
}
