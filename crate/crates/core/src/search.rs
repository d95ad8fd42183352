//! Group-size selection by first-layer attention error.
//!
//! For each candidate group width the query and key projection deltas of
//! the first layer are dropped out, and the error of the raw attention
//! score matrix `Q·Kᵀ` on a calibration batch is measured. The width with
//! the smallest error is used for every layer of the model.

use std::collections::BTreeMap;

use crate::checkpoint::TensorSource;
use crate::dropout::{apply_dropout, DropoutPlan};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{matmul_dense, matmul_sparse, CsrMatrix, DenseMatrix};

/// Mixed into the plan seed for calibration row subsampling so it does not
/// share a stream with any dropout group.
const CALIB_STREAM: u64 = 0xC0FF_EE00_CA11_B8A7;

/// First-layer query/key projections plus calibration inputs.
#[derive(Debug, Clone)]
pub struct AttentionProbe {
    pub wq_name: String,
    pub wk_name: String,
    pub calib: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    /// `(group_size, proxy_error)` in ascending group size.
    pub candidates: Vec<(usize, f64)>,
    pub best: usize,
    pub seed: u64,
}

/// `{alpha · 2^i} ∩ divisors(h_in)`, plus `h_in` itself, ascending.
pub fn candidate_group_sizes(alpha: f64, h_in: usize) -> Result<Vec<usize>> {
    if alpha.fract() != 0.0 || alpha < 2.0 {
        return Err(Error::Parameter(format!(
            "group search needs an integral alpha >= 2, got {alpha}"
        )));
    }
    let alpha = alpha as usize;
    if alpha > h_in {
        return Err(Error::EmptyCandidates(format!(
            "alpha {alpha} exceeds row width {h_in}"
        )));
    }
    let mut out: Vec<usize> = std::iter::successors(Some(alpha), |&g| g.checked_mul(2))
        .take_while(|&g| g <= h_in)
        .filter(|&g| h_in.is_multiple_of(g))
        .collect();
    if out.last() != Some(&h_in) {
        out.push(h_in);
    }
    Ok(out)
}

fn layer<'a>(src: &'a impl TensorSource, name: &str) -> Result<&'a DenseMatrix> {
    src.tensor(name)
        .ok_or_else(|| Error::structure(name, "probe layer not found"))
}

/// `x·W_bᵀ + x·ΔŴᵀ`, computed separately as in deployment.
fn separate_product(x: &DenseMatrix, base: &DenseMatrix, delta: &CsrMatrix) -> Result<DenseMatrix> {
    matmul_dense(x, base)?.add(&matmul_sparse(x, delta)?)
}

fn separate_product_dense(
    x: &DenseMatrix,
    base: &DenseMatrix,
    delta: &DenseMatrix,
) -> Result<DenseMatrix> {
    matmul_dense(x, base)?.add(&matmul_dense(x, delta)?)
}

/// `‖q·kᵀ − q̂·k̂ᵀ‖²` with every product and the sum in `f64`.
fn attention_error(
    q: &DenseMatrix,
    k: &DenseMatrix,
    q_hat: &DenseMatrix,
    k_hat: &DenseMatrix,
) -> f64 {
    let t = q.rows();
    let mut err = 0.0f64;
    for a in 0..t {
        for b in 0..t {
            let mut exact = 0.0f64;
            let mut approx = 0.0f64;
            for d in 0..q.cols() {
                exact += f64::from(q.get(a, d)) * f64::from(k.get(b, d));
                approx += f64::from(q_hat.get(a, d)) * f64::from(k_hat.get(b, d));
            }
            err += (exact - approx) * (exact - approx);
        }
    }
    err
}

/// Attention-score error between the uncompressed and compressed probe
/// layers. `compressed` must hold the probe layers' compressed deltas.
pub fn proxy_error(
    base: &impl TensorSource,
    delta: &impl TensorSource,
    compressed: &BTreeMap<String, CsrMatrix>,
    probe: &AttentionProbe,
) -> Result<f64> {
    let x = &probe.calib;
    let mut projections = Vec::with_capacity(2);
    for name in [&probe.wq_name, &probe.wk_name] {
        let wb = layer(base, name)?;
        let dw = layer(delta, name)?;
        let dw_hat = compressed.get(name.as_str()).ok_or_else(|| {
            Error::structure(name.as_str(), "no compressed delta for probe layer")
        })?;
        if wb.shape() != dw.shape() || dw.shape() != dw_hat.shape() {
            return Err(Error::structure(
                name.as_str(),
                "base, delta and compressed shapes differ",
            ));
        }
        let exact = separate_product_dense(x, wb, dw)?;
        let approx = separate_product(x, wb, dw_hat)?;
        projections.push((exact, approx));
    }
    let (q, q_hat) = &projections[0];
    let (k, k_hat) = &projections[1];
    if q.cols() != k.cols() {
        return Err(Error::Shape(format!(
            "query width {} differs from key width {}",
            q.cols(),
            k.cols()
        )));
    }
    Ok(attention_error(q, k, q_hat, k_hat))
}

/// Rows kept for calibration: a seeded shuffle of `0..t`, truncated to
/// `ceil(fraction · t)` and returned in ascending order.
pub fn calibration_rows(t: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Parameter(format!(
            "calibration fraction must be in (0, 1], got {fraction}"
        )));
    }
    let n = ((fraction * t as f64).ceil() as usize).clamp(1, t);
    let mut rows = SplitMix64::new(seed ^ CALIB_STREAM).sample_prefix(t, n);
    rows.sort_unstable();
    Ok(rows)
}

/// Evaluates every candidate group width on the probe layers with the same
/// seed and returns the one with the smallest proxy error. Ties go to the
/// larger width.
pub fn search_group_size(
    base: &impl TensorSource,
    delta: &impl TensorSource,
    probe: &AttentionProbe,
    alpha: f64,
    seed: u64,
    calib_fraction: f64,
) -> Result<SearchResult> {
    let wq = layer(delta, &probe.wq_name)?;
    let wk = layer(delta, &probe.wk_name)?;
    if probe.calib.cols() != wq.cols() || probe.calib.cols() != wk.cols() {
        return Err(Error::Shape(format!(
            "calibration inputs have {} columns, probe layers expect {}",
            probe.calib.cols(),
            wq.cols()
        )));
    }
    let rows = calibration_rows(probe.calib.rows(), calib_fraction, seed)?;
    let sub = AttentionProbe {
        wq_name: probe.wq_name.clone(),
        wk_name: probe.wk_name.clone(),
        calib: probe.calib.select_rows(&rows)?,
    };
    let mut candidates = Vec::new();
    for h in candidate_group_sizes(alpha, wq.cols())? {
        let plan = DropoutPlan::group_wise(alpha, h, seed)?;
        let compressed: BTreeMap<String, CsrMatrix> = [(&probe.wq_name, wq), (&probe.wk_name, wk)]
            .into_iter()
            .map(|(name, w)| (name.clone(), apply_dropout(w, &plan, name)))
            .collect();
        candidates.push((h, proxy_error(base, delta, &compressed, &sub)?));
    }
    let best = candidates
        .iter()
        .fold(None::<(usize, f64)>, |acc, &(h, e)| match acc {
            Some((_, be)) if e > be => acc,
            _ => Some((h, e)),
        })
        .map(|(h, _)| h)
        .expect("candidate set is never empty");
    Ok(SearchResult {
        candidates,
        best,
        seed,
    })
}
