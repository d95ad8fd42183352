//! Model checkpoints and the base/delta split.
//!
//! A fine-tuned weight is stored as `base + delta`. [`split`] computes the
//! delta with a single `f32` subtraction per element and [`merge`] adds it
//! back.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// Metadata key listing tensors that were 1-D in the source file.
pub const VECTOR_KEY: &str = "tensors.vector";
/// Metadata key naming the base model a delta was derived from.
pub const BASE_NAME_KEY: &str = "delta.base";

/// Read access to named layers.
///
/// Search code goes through this trait so tests can count which layers a
/// computation actually touches.
pub trait TensorSource {
    fn tensor(&self, name: &str) -> Option<&DenseMatrix>;
}

/// Named collection of weights, iterated in lexicographic order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelCheckpoint {
    pub name: String,
    pub tensors: BTreeMap<String, DenseMatrix>,
    /// Tensors that are 1-D (biases, norms). Stored as `1×n` matrices and
    /// never compressed.
    pub vectors: BTreeSet<String>,
    pub metadata: BTreeMap<String, String>,
}

impl ModelCheckpoint {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Self::default()
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, m: DenseMatrix) {
        self.tensors.insert(name.into(), m);
    }

    pub fn insert_vector(&mut self, name: impl Into<String>, values: Vec<f32>) -> Result<()> {
        let name = name.into();
        let n = values.len();
        self.tensors
            .insert(name.clone(), DenseMatrix::new(1, n, values)?);
        self.vectors.insert(name);
        Ok(())
    }

    pub fn is_vector(&self, name: &str) -> bool {
        self.vectors.contains(name)
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in &self.tensors {
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("tensor `{name}`")));
            }
        }
        Ok(())
    }
}

impl TensorSource for ModelCheckpoint {
    fn tensor(&self, name: &str) -> Option<&DenseMatrix> {
        self.tensors.get(name)
    }
}

/// Per-layer `finetuned − base`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeltaCheckpoint {
    pub base_name: String,
    pub name: String,
    pub tensors: BTreeMap<String, DenseMatrix>,
    pub vectors: BTreeSet<String>,
    pub metadata: BTreeMap<String, String>,
}

impl DeltaCheckpoint {
    pub fn is_vector(&self, name: &str) -> bool {
        self.vectors.contains(name)
    }

    /// Views the delta as a plain checkpoint for serialization. The base
    /// name travels in metadata.
    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        let mut metadata = self.metadata.clone();
        metadata.insert(BASE_NAME_KEY.into(), self.base_name.clone());
        ModelCheckpoint {
            name: self.name.clone(),
            tensors: self.tensors.clone(),
            vectors: self.vectors.clone(),
            metadata,
        }
    }

    pub fn from_checkpoint(mut ckpt: ModelCheckpoint) -> Self {
        let base_name = ckpt.metadata.remove(BASE_NAME_KEY).unwrap_or_default();
        Self {
            base_name,
            name: ckpt.name,
            tensors: ckpt.tensors,
            vectors: ckpt.vectors,
            metadata: ckpt.metadata,
        }
    }
}

impl TensorSource for DeltaCheckpoint {
    fn tensor(&self, name: &str) -> Option<&DenseMatrix> {
        self.tensors.get(name)
    }
}

fn check_aligned(
    base: &BTreeMap<String, DenseMatrix>,
    other: &BTreeMap<String, DenseMatrix>,
) -> Result<()> {
    if let Some(name) = base.keys().find(|k| !other.contains_key(*k)) {
        return Err(Error::structure(
            name.as_str(),
            "missing from the second checkpoint",
        ));
    }
    if let Some(name) = other.keys().find(|k| !base.contains_key(*k)) {
        return Err(Error::structure(
            name.as_str(),
            "missing from the base checkpoint",
        ));
    }
    for (name, b) in base {
        let o = &other[name];
        if b.shape() != o.shape() {
            return Err(Error::structure(
                name.as_str(),
                format!("shape {:?} vs {:?}", b.shape(), o.shape()),
            ));
        }
        if !b.is_finite() || !o.is_finite() {
            return Err(Error::NonFinite(format!("tensor `{name}`")));
        }
    }
    Ok(())
}

pub fn split(base: &ModelCheckpoint, finetuned: &ModelCheckpoint) -> Result<DeltaCheckpoint> {
    check_aligned(&base.tensors, &finetuned.tensors)?;
    let tensors = base
        .tensors
        .iter()
        .map(|(name, b)| Ok((name.clone(), finetuned.tensors[name].sub(b)?)))
        .collect::<Result<_>>()?;
    let mut metadata = finetuned.metadata.clone();
    if !finetuned.vectors.is_empty() {
        let names: Vec<&str> = finetuned.vectors.iter().map(String::as_str).collect();
        metadata.insert(VECTOR_KEY.into(), names.join(","));
    }
    Ok(DeltaCheckpoint {
        base_name: base.name.clone(),
        name: finetuned.name.clone(),
        tensors,
        vectors: finetuned.vectors.clone(),
        metadata,
    })
}

/// Elements where `base + delta` does not give back the fine-tuned value,
/// i.e. where the `f32` subtraction in [`split`] rounded.
pub fn inexact_elements(
    base: &ModelCheckpoint,
    finetuned: &ModelCheckpoint,
    delta: &DeltaCheckpoint,
) -> usize {
    base.tensors
        .iter()
        .filter_map(|(name, b)| Some((b, finetuned.tensors.get(name)?, delta.tensors.get(name)?)))
        .map(|(b, f, d)| {
            b.data()
                .iter()
                .zip(f.data())
                .zip(d.data())
                .filter(|((&b, &f), &d)| (b + d).to_bits() != f.to_bits())
                .count()
        })
        .sum()
}

pub fn merge(base: &ModelCheckpoint, delta: &DeltaCheckpoint) -> Result<ModelCheckpoint> {
    check_aligned(&base.tensors, &delta.tensors)?;
    let tensors = base
        .tensors
        .iter()
        .map(|(name, b)| Ok((name.clone(), b.add(&delta.tensors[name])?)))
        .collect::<Result<_>>()?;
    let mut metadata = delta.metadata.clone();
    metadata.remove(VECTOR_KEY);
    Ok(ModelCheckpoint {
        name: delta.name.clone(),
        tensors,
        vectors: base.vectors.union(&delta.vectors).cloned().collect(),
        metadata,
    })
}
