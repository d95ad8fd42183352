//! Separate quantization of sparse deltas.
//!
//! Stored values are quantized per tensor to `k`-bit codes with an affine
//! scale and zero point. The code range `0..2^k` is then split into `m`
//! contiguous parts of `2^k / m` codes each; part `j` keeps the entries
//! whose code falls in its range, rebased by the offset `-(2^k/m)·j` so that
//! only `k − log2 m` bits per code are stored. Dequantization adds the
//! offset back, so splitting never changes reconstructed values.

use crate::bitpack::PackedCodes;
use crate::error::{Error, Result};
use crate::tensor::{check_structure, Csr, CsrMatrix};

pub const MAX_BITS: u8 = 8;
pub const DEFAULT_BASELINE_BITS: u32 = 16;

/// Sparse matrix of `k`-bit codes.
pub type CodeMatrix = Csr<u8>;

/// Per-tensor affine quantizer: `value ≈ scale · (code − zero_point)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantScale {
    pub k: u8,
    pub scale: f32,
    pub zero_point: i32,
    /// Set when every stored value was equal; `scale` is then 0 and all
    /// codes are 0.
    pub constant: Option<f32>,
}

impl QuantScale {
    pub fn levels(&self) -> u32 {
        1 << self.k
    }

    pub fn dequantize_code(&self, code: u32) -> f32 {
        match self.constant {
            Some(c) => c,
            None => {
                (f64::from(self.scale) * (i64::from(code) - i64::from(self.zero_point)) as f64)
                    as f32
            }
        }
    }
}

fn check_bits(k: u8) -> Result<()> {
    if !(1..=MAX_BITS).contains(&k) {
        return Err(Error::Parameter(format!(
            "bit width must be in 1..=8, got {k}"
        )));
    }
    Ok(())
}

/// Quantizes the stored values of `sparse` to `k` bits.
///
/// Minimum and maximum are taken over stored entries only. The zero point
/// is `round_half_even(−min / s)` without clipping, so the codes of `min`
/// and `max` land on `0` and `2^k − 1` even when the range excludes zero.
pub fn quantize(sparse: &CsrMatrix, k: u8) -> Result<(CodeMatrix, QuantScale)> {
    check_bits(k)?;
    if sparse.nnz() == 0 {
        return Err(Error::Degenerate(
            "cannot quantize a matrix with no stored entries".into(),
        ));
    }
    if !sparse.is_finite() {
        return Err(Error::NonFinite("sparse delta values".into()));
    }
    let (min, max) = sparse
        .values()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let top = (1u32 << k) - 1;
    let scale = ((f64::from(max) - f64::from(min)) / f64::from(top)) as f32;
    if max == min || scale == 0.0 {
        let params = QuantScale {
            k,
            scale: 0.0,
            zero_point: 0,
            constant: Some(min),
        };
        return Ok((sparse.map(|_| 0u8), params));
    }
    let s = f64::from(scale);
    let zero_point = (-f64::from(min) / s).round_ties_even() as i64;
    let codes = sparse.map(|&v| {
        let q = (f64::from(v) / s).round_ties_even() as i64 + zero_point;
        q.clamp(0, i64::from(top)) as u8
    });
    let zero_point = i32::try_from(zero_point)
        .map_err(|_| Error::Parameter(format!("zero point {zero_point} out of range")))?;
    Ok((
        codes,
        QuantScale {
            k,
            scale,
            zero_point,
            constant: None,
        },
    ))
}

/// Dequantizes codes directly, without decomposition.
pub fn dequantize_codes(codes: &CodeMatrix, scale: &QuantScale) -> CsrMatrix {
    codes.map(|&c| scale.dequantize_code(u32::from(c)))
}

/// Quantizer plus decomposition settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    pub quant: QuantScale,
    pub parts: u32,
}

impl QuantParams {
    pub fn new(quant: QuantScale, parts: u32) -> Result<Self> {
        check_bits(quant.k)?;
        if !parts.is_power_of_two() || parts > quant.levels() {
            return Err(Error::Parameter(format!(
                "part count must be a power of two no larger than 2^k = {}, got {parts}",
                quant.levels()
            )));
        }
        Ok(Self { quant, parts })
    }

    /// Codes per part, `2^k / m`.
    pub fn span(&self) -> u32 {
        self.quant.levels() / self.parts
    }

    /// Stored bits per code, `k − log2 m`.
    pub fn part_width(&self) -> u8 {
        self.quant.k - self.parts.trailing_zeros() as u8
    }

    /// Offset added to codes of 0-based part `j`.
    pub fn offset(&self, j: u32) -> i32 {
        -((self.span() * j) as i32)
    }

    /// Inclusive code range of 0-based part `j`.
    pub fn range(&self, j: u32) -> (u32, u32) {
        (self.span() * j, self.span() * (j + 1) - 1)
    }

    pub fn part_of(&self, code: u32) -> u32 {
        code / self.span()
    }
}

/// One decomposed part: CSR positions plus bit-packed shifted codes.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantPart {
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    codes: PackedCodes,
}

impl QuantPart {
    pub fn new(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        codes: PackedCodes,
    ) -> Result<Self> {
        check_structure(rows, cols, &row_offsets, &col_indices)?;
        if codes.len() != col_indices.len() {
            return Err(Error::Corrupt(format!(
                "{} codes for {} positions",
                codes.len(),
                col_indices.len()
            )));
        }
        Ok(Self {
            row_offsets,
            col_indices,
            codes,
        })
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn codes(&self) -> &PackedCodes {
        &self.codes
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }
}

/// A quantized, decomposed layer.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedDelta {
    rows: usize,
    cols: usize,
    params: QuantParams,
    parts: Vec<QuantPart>,
}

impl QuantizedDelta {
    /// Assembles a layer from stored parts, checking part count and width.
    /// Cross-part overlap is detected by [`dequantize`].
    pub fn from_parts(
        rows: usize,
        cols: usize,
        params: QuantParams,
        parts: Vec<QuantPart>,
    ) -> Result<Self> {
        if parts.len() != params.parts as usize {
            return Err(Error::Corrupt(format!(
                "{} parts stored, {} declared",
                parts.len(),
                params.parts
            )));
        }
        for p in &parts {
            if p.row_offsets.len() != rows + 1 || p.col_indices.iter().any(|&c| c >= cols) {
                return Err(Error::Corrupt(
                    "part structure does not match layer shape".into(),
                ));
            }
            if p.codes.width() != params.part_width() {
                return Err(Error::Corrupt(format!(
                    "part packed at {} bits, expected {}",
                    p.codes.width(),
                    params.part_width()
                )));
            }
        }
        Ok(Self {
            rows,
            cols,
            params,
            parts,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn params(&self) -> &QuantParams {
        &self.params
    }

    pub fn parts(&self) -> &[QuantPart] {
        &self.parts
    }

    pub fn nnz(&self) -> usize {
        self.parts.iter().map(QuantPart::nnz).sum()
    }
}

/// Splits codes into `parts` value ranges and packs each part.
pub fn decompose(codes: &CodeMatrix, quant: QuantScale, parts: u32) -> Result<QuantizedDelta> {
    let params = QuantParams::new(quant, parts)?;
    let (rows, cols) = codes.shape();
    let m = parts as usize;
    let mut offsets = vec![vec![0usize]; m];
    let mut cols_by_part = vec![Vec::new(); m];
    let mut shifted = vec![Vec::new(); m];
    for r in 0..rows {
        let (cs, vs) = codes.row(r);
        for (&c, &v) in cs.iter().zip(vs) {
            let code = u32::from(v);
            if code >= quant.levels() {
                return Err(Error::Parameter(format!(
                    "code {code} exceeds {} bits",
                    quant.k
                )));
            }
            let j = params.part_of(code);
            cols_by_part[j as usize].push(c);
            shifted[j as usize].push((code as i32 + params.offset(j)) as u8);
        }
        for (o, cs) in offsets.iter_mut().zip(&cols_by_part) {
            o.push(cs.len());
        }
    }
    let width = params.part_width();
    let parts = offsets
        .into_iter()
        .zip(cols_by_part)
        .zip(shifted)
        .map(|((ro, ci), sc)| QuantPart::new(rows, cols, ro, ci, PackedCodes::pack(&sc, width)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantizedDelta {
        rows,
        cols,
        params,
        parts,
    })
}

/// Reconstructs the sparse delta: `s · (v − z − o_j)` for every stored code
/// `v` of part `j`, merged in ascending column order.
pub fn dequantize(q: &QuantizedDelta) -> Result<CsrMatrix> {
    let mut row_offsets = Vec::with_capacity(q.rows + 1);
    let mut col_indices = Vec::with_capacity(q.nnz());
    let mut values = Vec::with_capacity(q.nnz());
    let mut row: Vec<(usize, f32)> = Vec::new();
    row_offsets.push(0);
    for r in 0..q.rows {
        row.clear();
        for (j, part) in q.parts.iter().enumerate() {
            let offset = q.params.offset(j as u32);
            for i in part.row_offsets[r]..part.row_offsets[r + 1] {
                let code = i64::from(part.codes.get(i)) - i64::from(offset);
                let v = q.params.quant.dequantize_code(code as u32);
                row.push((part.col_indices[i], v));
            }
        }
        row.sort_unstable_by_key(|&(c, _)| c);
        if let Some(w) = row.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Corrupt(format!(
                "position ({r}, {}) stored in more than one part",
                w[0].0
            )));
        }
        for &(c, v) in &row {
            col_indices.push(c);
            values.push(v);
        }
        row_offsets.push(values.len());
    }
    CsrMatrix::new(q.rows, q.cols, row_offsets, col_indices, values)
}

/// Headline compression ratio `alpha · baseline_bits / (k − log2 m)`,
/// ignoring index storage.
pub fn nominal_ratio_with_baseline(alpha: f64, k: u32, m: u32, baseline_bits: u32) -> Result<f64> {
    if !m.is_power_of_two() {
        return Err(Error::Parameter(format!(
            "part count {m} is not a power of two"
        )));
    }
    let bits = i64::from(k) - i64::from(m.trailing_zeros());
    if bits < 1 {
        return Err(Error::Parameter(format!(
            "k - log2(m) = {bits}; at least one bit per code is required"
        )));
    }
    Ok(alpha * f64::from(baseline_bits) / bits as f64)
}

pub fn nominal_ratio(alpha: f64, k: u32, m: u32) -> Result<f64> {
    nominal_ratio_with_baseline(alpha, k, m, DEFAULT_BASELINE_BITS)
}
