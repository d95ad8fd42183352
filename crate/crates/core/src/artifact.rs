//! In-memory form of a compressed delta file: one entry per layer plus the
//! settings that produced it.

use std::collections::BTreeMap;

use crate::bitpack::packed_len;
use crate::checkpoint::DeltaCheckpoint;
use crate::error::{Error, Result};
use crate::quant::{dequantize, QuantizedDelta, DEFAULT_BASELINE_BITS};
use crate::tensor::{CsrMatrix, DenseMatrix};

/// Bytes per stored row offset or column index.
pub const INDEX_BYTES: usize = 4;
/// Scale (`f32`) plus zero point (`i32`).
pub const QUANT_PARAM_BYTES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    GroupDropout,
    Magnitude,
    GlobalDropout,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::GroupDropout => "group-dropout",
            Method::Magnitude => "magnitude",
            Method::GlobalDropout => "global-dropout",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "group-dropout" => Ok(Method::GroupDropout),
            "magnitude" => Ok(Method::Magnitude),
            "global-dropout" => Ok(Method::GlobalDropout),
            other => Err(Error::Parameter(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DqConfig {
    pub method: Method,
    pub alpha: f64,
    /// `None` means one group per row.
    pub group_size: Option<usize>,
    pub seed: u64,
    /// Absent for unquantized baseline artifacts.
    pub k: Option<u8>,
    pub m: Option<u32>,
    pub baseline_bits: u32,
    pub probe_q: Option<String>,
    pub probe_k: Option<String>,
    pub base_name: String,
    pub name: String,
}

impl Default for DqConfig {
    fn default() -> Self {
        Self {
            method: Method::GroupDropout,
            alpha: 1.0,
            group_size: None,
            seed: 0,
            k: None,
            m: None,
            baseline_bits: DEFAULT_BASELINE_BITS,
            probe_q: None,
            probe_k: None,
            base_name: String::new(),
            name: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerArtifact {
    Quantized(QuantizedDelta),
    /// No stored entries survived sparsification.
    Empty {
        rows: usize,
        cols: usize,
    },
    /// Unquantized sparse values (baselines).
    Sparse(CsrMatrix),
    /// Carried through uncompressed.
    Dense {
        values: DenseMatrix,
        vector: bool,
    },
}

impl LayerArtifact {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            LayerArtifact::Quantized(q) => (q.rows(), q.cols()),
            LayerArtifact::Empty { rows, cols } => (*rows, *cols),
            LayerArtifact::Sparse(s) => s.shape(),
            LayerArtifact::Dense { values, .. } => values.shape(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerArtifact::Quantized(_) => "quantized",
            LayerArtifact::Empty { .. } => "empty",
            LayerArtifact::Sparse(_) => "sparse",
            LayerArtifact::Dense { .. } => "dense",
        }
    }

    pub fn is_compressed(&self) -> bool {
        !matches!(self, LayerArtifact::Dense { .. })
    }

    pub fn stored_entries(&self) -> usize {
        match self {
            LayerArtifact::Quantized(q) => q.nnz(),
            LayerArtifact::Empty { .. } => 0,
            LayerArtifact::Sparse(s) => s.nnz(),
            LayerArtifact::Dense { values, .. } => values.len(),
        }
    }

    /// Sparse reconstruction of the delta.
    pub fn to_sparse(&self) -> Result<CsrMatrix> {
        match self {
            LayerArtifact::Quantized(q) => dequantize(q),
            LayerArtifact::Empty { rows, cols } => Ok(CsrMatrix::empty(*rows, *cols)),
            LayerArtifact::Sparse(s) => Ok(s.clone()),
            LayerArtifact::Dense { values, .. } => Ok(CsrMatrix::from_dense(values)),
        }
    }

    pub fn to_dense(&self) -> Result<DenseMatrix> {
        match self {
            LayerArtifact::Dense { values, .. } => Ok(values.clone()),
            other => Ok(other.to_sparse()?.to_dense()),
        }
    }

    /// Payload bytes this layer occupies in the artifact file.
    pub fn payload_bytes(&self) -> usize {
        let (rows, _) = self.shape();
        match self {
            LayerArtifact::Quantized(q) => q
                .parts()
                .iter()
                .map(|p| {
                    INDEX_BYTES * (rows + 1 + p.nnz()) + packed_len(p.nnz(), p.codes().width())
                })
                .sum(),
            LayerArtifact::Empty { .. } => 0,
            LayerArtifact::Sparse(s) => INDEX_BYTES * (rows + 1 + s.nnz()) + 4 * s.nnz(),
            LayerArtifact::Dense { values, .. } => 4 * values.len(),
        }
    }

    /// Payload bytes plus quantizer parameters.
    pub fn storage_bytes(&self) -> usize {
        self.payload_bytes()
            + match self {
                LayerArtifact::Quantized(_) => QUANT_PARAM_BYTES,
                _ => 0,
            }
    }
}

/// A compressed fine-tuned delta: every layer of one model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DqArtifact {
    pub config: DqConfig,
    pub layers: BTreeMap<String, LayerArtifact>,
}

impl DqArtifact {
    /// Dense reconstruction of every layer as a delta checkpoint.
    pub fn reconstruct(&self) -> Result<DeltaCheckpoint> {
        let mut out = DeltaCheckpoint {
            base_name: self.config.base_name.clone(),
            name: self.config.name.clone(),
            ..Default::default()
        };
        for (name, layer) in &self.layers {
            out.tensors.insert(name.clone(), layer.to_dense()?);
            if let LayerArtifact::Dense { vector: true, .. } = layer {
                out.vectors.insert(name.clone());
            }
        }
        Ok(out)
    }

    pub fn layer(&self, name: &str) -> Result<&LayerArtifact> {
        self.layers
            .get(name)
            .ok_or_else(|| Error::structure(name, "not present in the compressed artifact"))
    }
}
