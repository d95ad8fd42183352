//! Seeded synthetic checkpoints for tests, demos and the `gen-fixtures`
//! command.
//!
//! Fine-tuned weights are `base + delta`, where the delta has a smooth
//! low-rank component plus small noise, and inputs carry smooth per-channel
//! offsets. All values sit on a `2^-20` grid with magnitude below 4, so
//! `finetuned − base` is exact in `f32` and split/merge round-trips
//! bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::checkpoint::ModelCheckpoint;
use crate::tensor::DenseMatrix;

pub const GRID: f64 = 1.0 / (1u64 << 20) as f64;
const LIMIT: f64 = 4.0 - GRID;

pub const TOY_LAYERS: usize = 2;
pub const TOY_HIDDEN: usize = 64;
pub const TOY_TOKENS: usize = 32;
pub const TOY_PROJECTIONS: [&str; 4] = ["q_proj", "k_proj", "v_proj", "o_proj"];
pub const PROBE_Q: &str = "layers.0.attn.q_proj";
pub const PROBE_K: &str = "layers.0.attn.k_proj";

pub fn snap(v: f64) -> f32 {
    ((v / GRID).round() * GRID).clamp(-LIMIT, LIMIT) as f32
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn normal(r: &mut impl Rng) -> f64 {
    r.sample(StandardNormal)
}

/// Smooth function of the column index: a few random low-frequency
/// cosines.
fn smooth_profile(r: &mut impl Rng, cols: usize, terms: usize) -> Vec<f64> {
    let coeffs: Vec<(f64, f64, f64)> = (0..terms)
        .map(|i| {
            let freq = (i + 1) as f64 * r.random_range(0.5..1.5);
            (
                normal(r) / (i + 1) as f64,
                freq,
                r.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    (0..cols)
        .map(|k| {
            let t = k as f64 / cols as f64 * std::f64::consts::PI;
            coeffs
                .iter()
                .map(|&(a, f, ph)| a * (f * t + ph).cos())
                .sum()
        })
        .collect()
}

fn matrix(rows: usize, cols: usize, f: impl FnMut(usize) -> f32) -> DenseMatrix {
    DenseMatrix::new(rows, cols, (0..rows * cols).map(f).collect()).expect("positive dims")
}

/// Dense base weight with i.i.d. normal entries.
pub fn base_weight(r: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    matrix(rows, cols, |_| snap(scale * normal(r)))
}

/// Fine-tuning style delta: rank-`rank` smooth structure plus i.i.d.
/// noise, overall magnitude about `scale`.
pub fn structured_delta(
    r: &mut impl Rng,
    rows: usize,
    cols: usize,
    scale: f64,
    rank: usize,
    noise: f64,
) -> DenseMatrix {
    let basis: Vec<Vec<f64>> = (0..rank).map(|_| smooth_profile(r, cols, 3)).collect();
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let mix: Vec<f64> = (0..rank).map(|_| normal(r)).collect();
        for k in 0..cols {
            let low: f64 = mix.iter().zip(&basis).map(|(a, b)| a * b[k]).sum();
            data.push(snap(scale * (low + noise * normal(r))));
        }
    }
    DenseMatrix::new(rows, cols, data).expect("positive dims")
}

/// Activations with smooth per-channel offsets and scales.
pub fn activations(r: &mut impl Rng, tokens: usize, cols: usize) -> DenseMatrix {
    let offset = smooth_profile(r, cols, 4);
    let spread: Vec<f64> = smooth_profile(r, cols, 2)
        .into_iter()
        .map(|v| 0.3 * (0.5 * v).exp())
        .collect();
    matrix(tokens, cols, |i| {
        let k = i % cols;
        snap(offset[k] + spread[k] * normal(r))
    })
}

/// Base and fine-tuned models plus calibration inputs.
#[derive(Debug, Clone)]
pub struct ToyModel {
    pub base: ModelCheckpoint,
    pub finetuned: ModelCheckpoint,
    pub calib: DenseMatrix,
}

pub fn toy_layer_names() -> Vec<String> {
    (0..TOY_LAYERS)
        .flat_map(|l| {
            TOY_PROJECTIONS
                .iter()
                .map(move |p| format!("layers.{l}.attn.{p}"))
        })
        .collect()
}

/// Two-layer toy transformer, hidden size 64, 32 calibration tokens.
pub fn toy_transformer(seed: u64) -> ToyModel {
    toy_transformer_sized(seed, TOY_HIDDEN, TOY_TOKENS)
}

pub fn toy_transformer_sized(seed: u64, hidden: usize, tokens: usize) -> ToyModel {
    let mut r = rng(seed, 1);
    let mut base = ModelCheckpoint::new("toy-base");
    let mut finetuned = ModelCheckpoint::new("toy-finetuned");
    for meta in [&mut base.metadata, &mut finetuned.metadata] {
        meta.insert("family".into(), "toy-transformer".into());
        meta.insert("hidden_size".into(), hidden.to_string());
        meta.insert("num_layers".into(), TOY_LAYERS.to_string());
    }
    let base_scale = 1.0 / (hidden as f64).sqrt();
    for name in toy_layer_names() {
        let wb = base_weight(&mut r, hidden, hidden, base_scale);
        let dw = structured_delta(&mut r, hidden, hidden, 0.01 * base_scale, 4, 0.3);
        let wf = wb.add(&dw).expect("same shape");
        base.insert(name.clone(), wb);
        finetuned.insert(name, wf);
    }
    for l in 0..TOY_LAYERS {
        let name = format!("layers.{l}.norm");
        let nb: Vec<f32> = (0..hidden)
            .map(|_| snap(1.0 + 0.1 * normal(&mut r)))
            .collect();
        let nf: Vec<f32> = nb
            .iter()
            .map(|&v| snap(f64::from(v) + 0.001 * normal(&mut r)))
            .collect();
        base.insert_vector(name.clone(), nb).expect("non-empty");
        finetuned.insert_vector(name, nf).expect("non-empty");
    }
    let calib = activations(&mut r, tokens, hidden);
    ToyModel {
        base,
        finetuned,
        calib,
    }
}

/// Base weight at `base_scale` and fine-tuned weight `base + noise_scale ·
/// noise`, with matching inputs; used for intermediate-product
/// comparisons.
pub fn noisy_pair(
    seed: u64,
    rows: usize,
    cols: usize,
    tokens: usize,
    base_scale: f64,
    noise_scale: f64,
) -> (DenseMatrix, DenseMatrix, DenseMatrix) {
    let mut r = rng(seed, 2);
    let base = base_weight(&mut r, rows, cols, base_scale);
    let ft = matrix(rows, cols, |i| {
        snap(f64::from(base.data()[i]) + noise_scale * normal(&mut r))
    });
    let x = matrix(tokens, cols, |_| snap(normal(&mut r)));
    (base, ft, x)
}
