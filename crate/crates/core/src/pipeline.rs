//! End-to-end compression of a delta checkpoint and the separate
//! base/delta forward pass.

use std::collections::BTreeMap;

use crate::analysis::{global_dropout, magnitude_prune};
use crate::artifact::{DqArtifact, DqConfig, LayerArtifact, Method};
use crate::checkpoint::{DeltaCheckpoint, ModelCheckpoint};
use crate::dropout::{apply_dropout, DropoutPlan};
use crate::error::{Error, Result};
use crate::quant::{decompose, quantize, QuantParams, QuantScale, DEFAULT_BASELINE_BITS};
use crate::search::{search_group_size, AttentionProbe, SearchResult};
use crate::tensor::{matmul_dense, matmul_sparse, CsrMatrix, DenseMatrix};

pub const DEFAULT_CALIB_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupChoice {
    FullRow,
    Columns(usize),
    /// Pick by proxy-error search over the candidate set.
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressOptions {
    pub alpha: f64,
    pub group: GroupChoice,
    pub k: u8,
    pub m: u32,
    pub seed: u64,
    pub baseline_bits: u32,
    pub calib_fraction: f64,
    /// When non-empty, only 2-D layers whose name contains one of these
    /// substrings are compressed; others are carried through.
    pub include: Vec<String>,
}

impl Default for CompressOptions {
    fn default() -> Self {
        Self {
            alpha: 8.0,
            group: GroupChoice::FullRow,
            k: 4,
            m: 1,
            seed: 0,
            baseline_bits: DEFAULT_BASELINE_BITS,
            calib_fraction: DEFAULT_CALIB_FRACTION,
            include: Vec::new(),
        }
    }
}

fn selected(delta: &DeltaCheckpoint, include: &[String], name: &str) -> bool {
    !delta.is_vector(name)
        && (include.is_empty() || include.iter().any(|p| name.contains(p.as_str())))
}

fn passthrough(delta: &DeltaCheckpoint, name: &str, w: &DenseMatrix) -> LayerArtifact {
    LayerArtifact::Dense {
        values: w.clone(),
        vector: delta.is_vector(name),
    }
}

/// Dropout, quantization and decomposition of one layer.
pub fn compress_layer(
    w: &DenseMatrix,
    plan: &DropoutPlan,
    k: u8,
    m: u32,
    name: &str,
) -> Result<LayerArtifact> {
    let sparse = apply_dropout(w, plan, name);
    if sparse.nnz() == 0 {
        return Ok(LayerArtifact::Empty {
            rows: w.rows(),
            cols: w.cols(),
        });
    }
    let (codes, scale) = quantize(&sparse, k)?;
    Ok(LayerArtifact::Quantized(decompose(&codes, scale, m)?))
}

/// Compresses every selected layer of `delta`.
///
/// `GroupChoice::Auto` needs the base checkpoint and a probe; the search
/// result is returned alongside the artifact.
pub fn compress(
    delta: &DeltaCheckpoint,
    base: Option<&ModelCheckpoint>,
    probe: Option<&AttentionProbe>,
    opts: &CompressOptions,
) -> Result<(DqArtifact, Option<SearchResult>)> {
    // reject bad (k, m) before any work
    QuantParams::new(
        QuantScale {
            k: opts.k,
            scale: 0.0,
            zero_point: 0,
            constant: None,
        },
        opts.m,
    )?;
    let (group_size, search) = match opts.group {
        GroupChoice::FullRow => (None, None),
        GroupChoice::Columns(g) => (Some(g), None),
        GroupChoice::Auto => {
            let (base, probe) = base.zip(probe).ok_or_else(|| {
                Error::Parameter("automatic group size needs a base model and probe layers".into())
            })?;
            let r = search_group_size(
                base,
                delta,
                probe,
                opts.alpha,
                opts.seed,
                opts.calib_fraction,
            )?;
            (Some(r.best), Some(r))
        }
    };
    let plan = match group_size {
        Some(g) => DropoutPlan::group_wise(opts.alpha, g, opts.seed)?,
        None => DropoutPlan::row_wise(opts.alpha, opts.seed)?,
    };
    let mut layers = BTreeMap::new();
    for (name, w) in &delta.tensors {
        let layer = if selected(delta, &opts.include, name) {
            compress_layer(w, &plan, opts.k, opts.m, name)
                .map_err(|e| Error::structure(name.as_str(), e.to_string()))?
        } else {
            passthrough(delta, name, w)
        };
        layers.insert(name.clone(), layer);
    }
    let config = DqConfig {
        method: Method::GroupDropout,
        alpha: opts.alpha,
        group_size,
        seed: opts.seed,
        k: Some(opts.k),
        m: Some(opts.m),
        baseline_bits: opts.baseline_bits,
        probe_q: probe.map(|p| p.wq_name.clone()),
        probe_k: probe.map(|p| p.wk_name.clone()),
        base_name: delta.base_name.clone(),
        name: delta.name.clone(),
    };
    Ok((DqArtifact { config, layers }, search))
}

/// Unquantized baseline sparsification of every selected layer.
pub fn baseline(
    delta: &DeltaCheckpoint,
    method: Method,
    alpha: f64,
    seed: u64,
    include: &[String],
) -> Result<DqArtifact> {
    let mut layers = BTreeMap::new();
    for (name, w) in &delta.tensors {
        let layer = if selected(delta, include, name) {
            let s = match method {
                Method::Magnitude => magnitude_prune(w, alpha)?,
                Method::GlobalDropout => global_dropout(w, alpha, seed, name)?,
                Method::GroupDropout => {
                    apply_dropout(w, &DropoutPlan::row_wise(alpha, seed)?, name)
                }
            };
            LayerArtifact::Sparse(s)
        } else {
            passthrough(delta, name, w)
        };
        layers.insert(name.clone(), layer);
    }
    let config = DqConfig {
        method,
        alpha,
        seed,
        base_name: delta.base_name.clone(),
        name: delta.name.clone(),
        ..Default::default()
    };
    Ok(DqArtifact { config, layers })
}

/// `x·baseᵀ + x·deltaᵀ`, the two products computed independently and
/// summed elementwise.
pub fn forward_separate(
    x: &DenseMatrix,
    base: &DenseMatrix,
    delta: &CsrMatrix,
) -> Result<DenseMatrix> {
    if base.shape() != delta.shape() {
        return Err(Error::Shape(format!(
            "base {:?} vs delta {:?}",
            base.shape(),
            delta.shape()
        )));
    }
    matmul_dense(x, base)?.add(&matmul_sparse(x, delta)?)
}

/// `x·(base + delta)ᵀ` with the weights merged first.
pub fn forward_fused(
    x: &DenseMatrix,
    base: &DenseMatrix,
    delta: &CsrMatrix,
) -> Result<DenseMatrix> {
    matmul_dense(x, &base.add(&delta.to_dense())?)
}

/// Looks up one layer in a base model and a compressed artifact and runs
/// the forward pass.
pub fn forward_layer(
    base: &ModelCheckpoint,
    artifact: &DqArtifact,
    x: &DenseMatrix,
    layer: &str,
    fused: bool,
) -> Result<DenseMatrix> {
    let wb = base
        .tensors
        .get(layer)
        .ok_or_else(|| Error::structure(layer, "not present in the base model"))?;
    let delta = artifact.layer(layer)?.to_sparse()?;
    if x.cols() != wb.cols() {
        return Err(Error::Shape(format!(
            "inputs have {} columns, layer `{layer}` expects {}",
            x.cols(),
            wb.cols()
        )));
    }
    if fused {
        forward_fused(x, wb, &delta)
    } else {
        forward_separate(x, wb, &delta)
    }
}
