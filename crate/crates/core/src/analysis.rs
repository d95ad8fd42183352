//! Intermediate-product statistics, layer loss, and the two baseline
//! sparsifiers (magnitude pruning and tensor-wide dropout).

use crate::dropout::{group_survivors, keep_count};
use crate::error::{Error, Result};
use crate::tensor::{CsrMatrix, DenseMatrix};

/// Per output element `(p, q)`, statistics of the products
/// `{x[p][k] · w[q][k] : k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntermediateStats {
    /// Population variance.
    pub variance: DenseMatrix,
    /// `max − min`.
    pub range: DenseMatrix,
}

pub fn intermediate_stats(x: &DenseMatrix, w: &DenseMatrix) -> Result<IntermediateStats> {
    if x.cols() != w.cols() {
        return Err(Error::Shape(format!(
            "inputs have {} columns, weight has {}",
            x.cols(),
            w.cols()
        )));
    }
    let n = x.cols() as f64;
    let mut variance = Vec::with_capacity(x.rows() * w.rows());
    let mut range = Vec::with_capacity(x.rows() * w.rows());
    let mut products = Vec::with_capacity(x.cols());
    for p in 0..x.rows() {
        for q in 0..w.rows() {
            products.clear();
            products.extend(
                x.row(p)
                    .iter()
                    .zip(w.row(q))
                    .map(|(&a, &b)| f64::from(a) * f64::from(b)),
            );
            let mean = products.iter().sum::<f64>() / n;
            let var = products
                .iter()
                .map(|y| (y - mean) * (y - mean))
                .sum::<f64>()
                / n;
            let (lo, hi) = products
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| {
                    (lo.min(y), hi.max(y))
                });
            variance.push(var as f32);
            range.push((hi - lo) as f32);
        }
    }
    Ok(IntermediateStats {
        variance: DenseMatrix::new(x.rows(), w.rows(), variance)?,
        range: DenseMatrix::new(x.rows(), w.rows(), range)?,
    })
}

/// Mean and selected quantiles (nearest-rank) of a set of values.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

pub fn summarize(values: &[f32]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut sorted: Vec<f64> = values.iter().map(|&v| f64::from(v)).collect();
    sorted.sort_by(f64::total_cmp);
    let rank =
        |q: f64| sorted[((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1];
    Some(Summary {
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        p50: rank(0.5),
        p90: rank(0.9),
        p99: rank(0.99),
        max: sorted[sorted.len() - 1],
    })
}

/// `‖x·wᵀ − x·ŵᵀ‖²`, with `ŵ` sparse.
///
/// When `base` is given, both sides become `x·(base + ·)ᵀ`; the base terms
/// cancel up to rounding. Everything is accumulated in `f64` and nothing is
/// rounded to `f32` along the way.
pub fn layer_loss(
    x: &DenseMatrix,
    w: &DenseMatrix,
    w_hat: &CsrMatrix,
    base: Option<&DenseMatrix>,
) -> Result<f64> {
    if x.cols() != w.cols() || w.shape() != w_hat.shape() {
        return Err(Error::Shape(format!(
            "inputs {:?}, weight {:?}, compressed {:?}",
            x.shape(),
            w.shape(),
            w_hat.shape()
        )));
    }
    if let Some(b) = base {
        if b.shape() != w.shape() {
            return Err(Error::Shape(format!(
                "base {:?} vs weight {:?}",
                b.shape(),
                w.shape()
            )));
        }
    }
    let mut loss = 0.0f64;
    for p in 0..x.rows() {
        let xr = x.row(p);
        for q in 0..w.rows() {
            let dot = |row: &[f32]| -> f64 {
                xr.iter()
                    .zip(row)
                    .map(|(&a, &b)| f64::from(a) * f64::from(b))
                    .sum()
            };
            let (cols, vals) = w_hat.row(q);
            let sparse: f64 = cols
                .iter()
                .zip(vals)
                .map(|(&c, &v)| f64::from(xr[c]) * f64::from(v))
                .sum();
            let base_term = base.map_or(0.0, |b| dot(b.row(q)));
            let exact = base_term + dot(w.row(q));
            let approx = base_term + sparse;
            loss += (exact - approx) * (exact - approx);
        }
    }
    Ok(loss)
}

fn from_flat(rows: usize, cols: usize, mut kept: Vec<(usize, f32)>) -> CsrMatrix {
    kept.sort_unstable_by_key(|&(i, _)| i);
    let mut row_offsets = vec![0usize; rows + 1];
    for &(i, _) in &kept {
        row_offsets[i / cols + 1] += 1;
    }
    for r in 0..rows {
        row_offsets[r + 1] += row_offsets[r];
    }
    let col_indices = kept.iter().map(|&(i, _)| i % cols).collect();
    let values = kept.into_iter().map(|(_, v)| v).collect();
    CsrMatrix::new(rows, cols, row_offsets, col_indices, values)
        .expect("flat indices are sorted and in range")
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha < 1.0 {
        return Err(Error::Parameter(format!("alpha must be >= 1, got {alpha}")));
    }
    Ok(())
}

/// Keeps the `ceil(numel / alpha)` entries of largest magnitude, unscaled.
/// Ties go to the earlier position in row-major order.
pub fn magnitude_prune(delta: &DenseMatrix, alpha: f64) -> Result<CsrMatrix> {
    check_alpha(alpha)?;
    let keep = ((delta.len() as f64 / alpha).ceil() as usize).min(delta.len());
    let mut order: Vec<usize> = (0..delta.len()).collect();
    let data = delta.data();
    order.sort_by(|&a, &b| data[b].abs().total_cmp(&data[a].abs()).then(a.cmp(&b)));
    let kept = order[..keep].iter().map(|&i| (i, data[i])).collect();
    Ok(from_flat(delta.rows(), delta.cols(), kept))
}

/// Dropout with one group spanning the flattened tensor: exactly
/// `round_half_even(numel / alpha)` survivors, each scaled by `alpha`.
pub fn global_dropout(
    delta: &DenseMatrix,
    alpha: f64,
    seed: u64,
    layer_name: &str,
) -> Result<CsrMatrix> {
    check_alpha(alpha)?;
    let n = delta.len();
    let scale = alpha as f32;
    let kept = group_survivors(seed, layer_name, 0, 0, n, keep_count(n, alpha))
        .into_iter()
        .map(|i| (i, scale * delta.data()[i]))
        .collect();
    Ok(from_flat(delta.rows(), delta.cols(), kept))
}
