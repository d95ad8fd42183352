//! Row-wise and group-wise dropout on delta weights.
//!
//! Each row of a layer is cut into contiguous groups of `group_size`
//! columns. Inside every group an exact number of positions survives,
//! `round_half_even(len / alpha)`, chosen uniformly without replacement,
//! and survivors are multiplied by `alpha`. Each group draws from its own
//! SplitMix64 stream seeded by [`rng::group_seed`], so masks do not depend
//! on evaluation order.

use crate::error::{Error, Result};
use crate::rng::{self, SplitMix64};
use crate::tensor::{CsrMatrix, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DropoutMode {
    RowWise,
    GroupWise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupSize {
    /// One group spanning the whole row.
    FullRow,
    Columns(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutPlan {
    alpha: f64,
    group_size: GroupSize,
    seed: u64,
    mode: DropoutMode,
}

impl DropoutPlan {
    pub fn new(alpha: f64, group_size: GroupSize, seed: u64, mode: DropoutMode) -> Result<Self> {
        if !alpha.is_finite() || alpha < 1.0 {
            return Err(Error::Parameter(format!("alpha must be >= 1, got {alpha}")));
        }
        if group_size == GroupSize::Columns(0) {
            return Err(Error::Parameter("group size must be positive".into()));
        }
        Ok(Self {
            alpha,
            group_size,
            seed,
            mode,
        })
    }

    pub fn row_wise(alpha: f64, seed: u64) -> Result<Self> {
        Self::new(alpha, GroupSize::FullRow, seed, DropoutMode::RowWise)
    }

    pub fn group_wise(alpha: f64, group_size: usize, seed: u64) -> Result<Self> {
        Self::new(
            alpha,
            GroupSize::Columns(group_size),
            seed,
            DropoutMode::GroupWise,
        )
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn group_size(&self) -> GroupSize {
        self.group_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> DropoutMode {
        self.mode
    }

    /// Group width actually used on a row of `cols` entries.
    pub fn effective_group_size(&self, cols: usize) -> usize {
        match (self.mode, self.group_size) {
            (DropoutMode::RowWise, _) | (_, GroupSize::FullRow) => cols,
            (DropoutMode::GroupWise, GroupSize::Columns(h)) => h.min(cols),
        }
    }

    /// Survivors in a group of `len` entries.
    pub fn keep_count(&self, len: usize) -> usize {
        keep_count(len, self.alpha)
    }

    /// Fraction of each row that survives once per-group rounding is
    /// applied. Differs from `1 / alpha` when `alpha` does not divide the
    /// group width.
    pub fn effective_keep_fraction(&self, cols: usize) -> f64 {
        let kept: usize = group_spans(cols, self.effective_group_size(cols))
            .map(|(_, len)| self.keep_count(len))
            .sum();
        kept as f64 / cols as f64
    }
}

pub(crate) fn keep_count(len: usize, alpha: f64) -> usize {
    ((len as f64 / alpha).round_ties_even() as usize).min(len)
}

/// `(start, len)` of each group in a row; the last may be shorter.
fn group_spans(cols: usize, width: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..cols)
        .step_by(width)
        .map(move |start| (start, width.min(cols - start)))
}

/// Sorted survivor offsets within one group.
pub(crate) fn group_survivors(
    seed: u64,
    layer_name: &str,
    row: usize,
    group: usize,
    len: usize,
    keep: usize,
) -> Vec<usize> {
    let mut g = SplitMix64::new(rng::group_seed(seed, layer_name, row, group));
    let mut kept = g.sample_prefix(len, keep);
    kept.sort_unstable();
    kept
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<u64>,
}

impl MaskMatrix {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![0; (rows * cols).div_ceil(64)],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        let i = r * self.cols + c;
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    fn set(&mut self, r: usize, c: usize) {
        let i = r * self.cols + c;
        self.bits[i / 64] |= 1 << (i % 64);
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn row_count(&self, r: usize, span: std::ops::Range<usize>) -> usize {
        span.filter(|&c| self.get(r, c)).count()
    }
}

pub fn make_mask(rows: usize, cols: usize, plan: &DropoutPlan, layer_name: &str) -> MaskMatrix {
    let mut mask = MaskMatrix::new(rows, cols);
    let width = plan.effective_group_size(cols);
    for r in 0..rows {
        for (gi, (start, len)) in group_spans(cols, width).enumerate() {
            let keep = plan.keep_count(len);
            for off in group_survivors(plan.seed, layer_name, r, gi, len, keep) {
                mask.set(r, start + off);
            }
        }
    }
    mask
}

/// Masks `delta` and rescales survivors by `alpha`. Every kept position is
/// stored, including positions whose delta is exactly zero.
pub fn apply_dropout(delta: &DenseMatrix, plan: &DropoutPlan, layer_name: &str) -> CsrMatrix {
    let (rows, cols) = delta.shape();
    let scale = plan.alpha as f32;
    let width = plan.effective_group_size(cols);
    let mut row_offsets = Vec::with_capacity(rows + 1);
    let mut col_indices = Vec::new();
    let mut values = Vec::new();
    row_offsets.push(0);
    for r in 0..rows {
        let row = delta.row(r);
        for (gi, (start, len)) in group_spans(cols, width).enumerate() {
            let keep = plan.keep_count(len);
            for off in group_survivors(plan.seed, layer_name, r, gi, len, keep) {
                col_indices.push(start + off);
                values.push(scale * row[start + off]);
            }
        }
        row_offsets.push(values.len());
    }
    CsrMatrix::new(rows, cols, row_offsets, col_indices, values)
        .expect("groups are visited in ascending column order")
}
