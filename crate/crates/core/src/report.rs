//! Per-layer and total compression accounting.

use serde::Serialize;

use crate::analysis::layer_loss;
use crate::artifact::{DqArtifact, LayerArtifact};
use crate::checkpoint::DeltaCheckpoint;
use crate::dropout::{DropoutMode, DropoutPlan, GroupSize};
use crate::error::{Error, Result};
use crate::format::ddq;
use crate::quant::nominal_ratio_with_baseline;
use crate::tensor::DenseMatrix;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportConfig {
    pub alpha: f64,
    pub baseline_bits: u32,
    pub group_size: Option<usize>,
    pub k: Option<u8>,
    pub m: Option<u32>,
    pub method: String,
    pub seed: u64,
    pub variance: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerReport {
    pub name: String,
    pub kind: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub stored_entries: usize,
    /// Fraction of positions not stored.
    pub sparsity: f64,
    pub effective_keep_fraction: Option<f64>,
    pub k: Option<u8>,
    pub m: Option<u32>,
    /// `alpha · baseline_bits / (k − log2 m)`; `None` for uncompressed
    /// layers and when parts need zero bits per code.
    pub nominal_ratio: Option<f64>,
    /// Baseline bytes over stored bytes, index overhead included.
    pub measured_ratio: Option<f64>,
    pub baseline_bytes: usize,
    pub storage_bytes: usize,
    pub layer_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportTotals {
    pub layers: usize,
    pub compressed_layers: usize,
    pub stored_entries: usize,
    /// Over compressed layers only.
    pub baseline_bytes: usize,
    pub storage_bytes: usize,
    pub measured_ratio: Option<f64>,
    /// Every layer at the baseline width, over the encoded artifact size.
    pub file_bytes: usize,
    pub file_ratio: f64,
    pub mean_layer_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompressionReport {
    pub config: ReportConfig,
    pub layers: Vec<LayerReport>,
    pub totals: ReportTotals,
}

fn keep_fraction(artifact: &DqArtifact, cols: usize) -> Option<f64> {
    let c = &artifact.config;
    let (mode, group) = match c.group_size {
        Some(g) => (DropoutMode::GroupWise, GroupSize::Columns(g)),
        None => (DropoutMode::RowWise, GroupSize::FullRow),
    };
    DropoutPlan::new(c.alpha, group, c.seed, mode)
        .ok()
        .map(|p| p.effective_keep_fraction(cols))
}

/// Builds the report. Layer losses are filled in when both the original
/// delta and evaluation inputs are supplied, for layers whose width
/// matches the inputs.
pub fn build_report(
    artifact: &DqArtifact,
    delta: Option<&DeltaCheckpoint>,
    inputs: Option<&DenseMatrix>,
) -> Result<CompressionReport> {
    let c = &artifact.config;
    if let Some(d) = delta {
        for name in d.tensors.keys() {
            if !artifact.layers.contains_key(name) {
                return Err(Error::structure(
                    name.as_str(),
                    "no artifact for this layer",
                ));
            }
        }
    }
    let bytes_per_value = f64::from(c.baseline_bits) / 8.0;
    let mut layers = Vec::with_capacity(artifact.layers.len());
    for (name, layer) in &artifact.layers {
        let (rows, cols) = layer.shape();
        let numel = rows * cols;
        let baseline_bytes = (numel as f64 * bytes_per_value) as usize;
        let storage_bytes = layer.storage_bytes();
        let compressed = layer.is_compressed();
        let (k, m) = match layer {
            LayerArtifact::Quantized(q) => (Some(q.params().quant.k), Some(q.params().parts)),
            LayerArtifact::Empty { .. } => (c.k, c.m),
            _ => (None, None),
        };
        let nominal_ratio = match (compressed, k, m) {
            (false, _, _) => None,
            (true, Some(k), Some(m)) => {
                nominal_ratio_with_baseline(c.alpha, u32::from(k), m, c.baseline_bits).ok()
            }
            (true, _, _) => Some(c.alpha),
        };
        let layer_loss = match (delta, inputs) {
            (Some(d), Some(x)) if compressed => match d.tensors.get(name) {
                Some(w) if w.cols() == x.cols() => {
                    Some(layer_loss(x, w, &layer.to_sparse()?, None)?)
                }
                _ => None,
            },
            _ => None,
        };
        let stored = layer.stored_entries();
        layers.push(LayerReport {
            name: name.clone(),
            kind: layer.kind(),
            rows,
            cols,
            stored_entries: stored,
            sparsity: 1.0 - stored as f64 / numel as f64,
            effective_keep_fraction: match layer {
                LayerArtifact::Quantized(_) | LayerArtifact::Empty { .. }
                    if matches!(c.method, crate::artifact::Method::GroupDropout) =>
                {
                    keep_fraction(artifact, cols)
                }
                _ => None,
            },
            k,
            m,
            nominal_ratio,
            measured_ratio: (compressed && storage_bytes > 0)
                .then(|| baseline_bytes as f64 / storage_bytes as f64),
            baseline_bytes,
            storage_bytes,
            layer_loss,
        });
    }
    let compressed: Vec<&LayerReport> = layers.iter().filter(|l| l.kind != "dense").collect();
    let baseline_bytes: usize = compressed.iter().map(|l| l.baseline_bytes).sum();
    let storage_bytes: usize = compressed.iter().map(|l| l.storage_bytes).sum();
    let losses: Vec<f64> = layers.iter().filter_map(|l| l.layer_loss).collect();
    let file_bytes = ddq::encode(artifact)?.len();
    let all_baseline: usize = layers.iter().map(|l| l.baseline_bytes).sum();
    let totals = ReportTotals {
        layers: layers.len(),
        compressed_layers: compressed.len(),
        stored_entries: compressed.iter().map(|l| l.stored_entries).sum(),
        baseline_bytes,
        storage_bytes,
        measured_ratio: (storage_bytes > 0).then(|| baseline_bytes as f64 / storage_bytes as f64),
        file_bytes,
        file_ratio: all_baseline as f64 / file_bytes as f64,
        mean_layer_loss: (!losses.is_empty())
            .then(|| losses.iter().sum::<f64>() / losses.len() as f64),
    };
    Ok(CompressionReport {
        config: ReportConfig {
            alpha: c.alpha,
            baseline_bits: c.baseline_bits,
            group_size: c.group_size,
            k: c.k,
            m: c.m,
            method: c.method.as_str().into(),
            seed: c.seed,
            variance: "population",
        },
        layers,
        totals,
    })
}

impl CompressionReport {
    /// Key-sorted JSON.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&serde_json::to_value(self)?)?)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(
            "name,kind,rows,cols,stored_entries,sparsity,nominal_ratio,measured_ratio,storage_bytes,layer_loss\n",
        );
        for l in &self.layers {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                l.name,
                l.kind,
                l.rows,
                l.cols,
                l.stored_entries,
                l.sparsity,
                opt(l.nominal_ratio),
                opt(l.measured_ratio),
                l.storage_bytes,
                opt(l.layer_loss)
            ));
        }
        out
    }

    /// Human-readable summary table.
    pub fn summary(&self) -> String {
        let c = &self.config;
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        let mut out = format!(
            "method={} alpha={} group_size={} k={} m={} seed={} baseline_bits={}\n",
            c.method,
            c.alpha,
            c.group_size.map_or("row".into(), |g| g.to_string()),
            c.k.map_or("-".into(), |k| k.to_string()),
            c.m.map_or("-".into(), |m| m.to_string()),
            c.seed,
            c.baseline_bits
        );
        for l in &self.layers {
            out.push_str(&format!(
                "{:<32} {:<9} {:>5}x{:<5} stored={:<7} nominal={:<9} measured={:<8} loss={}\n",
                l.name,
                l.kind,
                l.rows,
                l.cols,
                l.stored_entries,
                fmt(l.nominal_ratio),
                fmt(l.measured_ratio),
                l.layer_loss.map_or("-".into(), |v| format!("{v:.6e}"))
            ));
        }
        let t = &self.totals;
        out.push_str(&format!(
            "total: {} layers ({} compressed), stored={} measured={} file_bytes={} file_ratio={:.3}\n",
            t.layers,
            t.compressed_layers,
            t.stored_entries,
            fmt(t.measured_ratio),
            t.file_bytes,
            t.file_ratio
        ));
        out
    }
}
