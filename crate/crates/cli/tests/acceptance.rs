//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use deltacomp::artifact::LayerArtifact;
use deltacomp::fixtures::{noisy_pair, toy_layer_names, toy_transformer, PROBE_K, PROBE_Q};
use deltacomp::format::{ddq, dtc};
use deltacomp::pipeline::{self, DEFAULT_CALIB_FRACTION};
use deltacomp::quant::dequantize_codes;
use deltacomp::{
    apply_dropout, candidate_group_sizes, decompose, dequantize, intermediate_stats, make_mask,
    nominal_ratio, quantize, search_group_size, split, AttentionProbe, CompressOptions, CsrMatrix,
    DeltaCheckpoint, DenseMatrix, DqArtifact, DropoutPlan, GroupChoice, Method, ModelCheckpoint,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const BIN: &str = env!("CARGO_BIN_EXE_deltacomp");

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        ok,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(r: &mut impl Rng) -> f64 {
    r.sample(StandardNormal)
}

fn random_dense(r: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    DenseMatrix::new(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| (scale * normal(r)) as f32)
            .collect(),
    )
    .unwrap()
}

fn dense_f64(x: &DenseMatrix, w: &DenseMatrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.rows() * w.rows());
    for p in 0..x.rows() {
        for q in 0..w.rows() {
            out.push(
                x.row(p)
                    .iter()
                    .zip(w.row(q))
                    .map(|(&a, &b)| f64::from(a) * f64::from(b))
                    .sum(),
            );
        }
    }
    out
}

fn run_cli(args: &[&str]) -> String {
    let out = Command::new(BIN)
        .args(args)
        .output()
        .expect("spawn deltacomp");
    assert!(
        out.status.success(),
        "deltacomp {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

// 1

fn ratio_formula() -> Outcome {
    let a = nominal_ratio(8.0, 4, 8).unwrap();
    let b = nominal_ratio(32.0, 4, 8).unwrap();
    outcome(
        a == 128.0 && b == 512.0,
        format!("nominal_ratio(8,4,8)={a}, nominal_ratio(32,4,8)={b}"),
    )
}

// 2 and 3 share a corpus of random sparse layers.

fn corpus_layer(r: &mut impl Rng) -> CsrMatrix {
    let rows = r.random_range(1..=64);
    let cols = r.random_range(1..=64);
    let density: f64 = r.random_range(0.02..=1.0);
    let scale = 10f64.powf(r.random_range(-4.0..1.0));
    let offset = scale * r.random_range(-3.0..3.0);
    let style = r.random_range(0..4);
    let mut data: Vec<f32> = (0..rows * cols)
        .map(|_| {
            if r.random_bool(density) {
                match style {
                    0 => (scale * normal(r)) as f32,
                    1 => (offset + scale * normal(r)) as f32,
                    2 => (scale * f64::from(r.random_range(-3i32..=3))) as f32,
                    _ => offset as f32,
                }
            } else {
                0.0
            }
        })
        .collect();
    if data.iter().all(|&v| v == 0.0) {
        data[0] = (scale + offset.abs()) as f32;
    }
    CsrMatrix::from_dense(&DenseMatrix::new(rows, cols, data).unwrap())
}

fn corpus() -> Vec<CsrMatrix> {
    let mut r = rng(2);
    (0..1000).map(|_| corpus_layer(&mut r)).collect()
}

fn same_csr_bits(a: &CsrMatrix, b: &CsrMatrix) -> bool {
    a.shape() == b.shape()
        && a.row_offsets() == b.row_offsets()
        && a.col_indices() == b.col_indices()
        && a.values()
            .iter()
            .zip(b.values())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

fn decomposition_neutrality() -> Outcome {
    let mut cases = 0usize;
    let mut failures = 0usize;
    for layer in corpus() {
        for k in 1..=8u8 {
            let (codes, scale) = quantize(&layer, k).unwrap();
            let reference = dequantize_codes(&codes, &scale);
            for m in [1u32, 2, 4, 8, 16].into_iter().filter(|&m| m <= 1 << k) {
                let q = decompose(&codes, scale, m).unwrap();
                let back = dequantize(&q).unwrap();
                cases += 1;
                if q.parts().len() != m as usize
                    || q.nnz() != layer.nnz()
                    || !same_csr_bits(&back, &reference)
                {
                    failures += 1;
                }
            }
        }
    }
    outcome(
        failures == 0,
        format!("{cases} (layer, k, m) cases, {failures} mismatches"),
    )
}

fn quantization_bound() -> Outcome {
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    let mut violations = 0usize;
    for layer in corpus() {
        let (lo, hi) = layer
            .values()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(f64::from(v)), hi.max(f64::from(v)))
            });
        let range = hi - lo;
        for k in 1..=8u8 {
            let (codes, scale) = quantize(&layer, k).unwrap();
            let q = decompose(&codes, scale, 1).unwrap();
            let back = dequantize(&q).unwrap();
            let s = range / f64::from((1u32 << k) - 1);
            let bound = s / 2.0 + range * 2f64.powi(-20);
            for (&orig, &got) in layer.values().iter().zip(back.values()) {
                let err = (f64::from(got) - f64::from(orig)).abs();
                checked += 1;
                if range > 0.0 {
                    worst = worst.max(err / bound);
                }
                if err > bound {
                    violations += 1;
                }
            }
        }
    }
    outcome(
        violations == 0,
        format!("{checked} stored values, {violations} over bound, worst error/bound {worst:.4}"),
    )
}

// 4

fn dropout_exactness() -> Outcome {
    let mut r = rng(4);
    let mut groups = 0usize;
    let mut bad = 0usize;
    for layer in 0..200 {
        let rows = r.random_range(1..=16);
        let cols = 16 * r.random_range(1..=8);
        let w = DenseMatrix::new(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| {
                    let v = normal(&mut r) as f32;
                    if v == 0.0 {
                        1.0
                    } else {
                        v
                    }
                })
                .collect(),
        )
        .unwrap();
        let name = format!("model.layers.{layer}.mlp");
        let seed: u64 = r.random();
        for alpha in [2.0f64, 4.0, 8.0, 16.0] {
            for h in candidate_group_sizes(alpha, cols).unwrap() {
                let plan = DropoutPlan::group_wise(alpha, h, seed).unwrap();
                let s = apply_dropout(&w, &plan, &name);
                let want = (h as f64 / alpha).round_ties_even() as usize;
                for row in 0..rows {
                    let (cs, vs) = s.row(row);
                    for g in 0..cols / h {
                        groups += 1;
                        if cs.iter().filter(|&&c| c / h == g).count() != want {
                            bad += 1;
                        }
                    }
                    for (&c, &v) in cs.iter().zip(vs) {
                        if v.to_bits() != (alpha as f32 * w.get(row, c)).to_bits() {
                            bad += 1;
                        }
                    }
                }
            }
        }
    }
    outcome(
        bad == 0,
        format!("{groups} groups over 200 layers, {bad} violations"),
    )
}

// 5

fn unbiasedness() -> Outcome {
    let mut r = rng(5);
    let w = random_dense(&mut r, 8, 8, 1.0);
    let n = 10_000u64;
    let mut details = Vec::new();
    let mut ok = true;
    for (label, plan_for) in [
        (
            "row-wise",
            Box::new(|s| DropoutPlan::row_wise(4.0, s).unwrap()) as Box<dyn Fn(u64) -> DropoutPlan>,
        ),
        (
            "groups of 4",
            Box::new(|s| DropoutPlan::group_wise(4.0, 4, s).unwrap()),
        ),
    ] {
        let mut sum = [0.0f64; 64];
        let mut sum_sq = [0.0f64; 64];
        for seed in 0..n {
            let d = apply_dropout(&w, &plan_for(seed), "fixed").to_dense();
            for (i, &v) in d.data().iter().enumerate() {
                sum[i] += f64::from(v);
                sum_sq[i] += f64::from(v) * f64::from(v);
            }
        }
        let nf = n as f64;
        let within = (0..64)
            .filter(|&i| {
                let mean = sum[i] / nf;
                let var = (sum_sq[i] - nf * mean * mean) / (nf - 1.0);
                let se = (var.max(0.0) / nf).sqrt();
                (mean - f64::from(w.data()[i])).abs() <= 3.0 * se
            })
            .count();
        ok &= within >= 62;
        details.push(format!("{label}: {within}/64 within 3 SE"));
    }
    outcome(ok, details.join(", "))
}

// 6

fn mode_equivalence() -> Outcome {
    let mut r = rng(6);
    let mut mismatches = 0usize;
    for case in 0..100 {
        let rows = r.random_range(1..=32);
        let cols = r.random_range(1..=96);
        let seed: u64 = r.random();
        let alpha = [1.0, 1.5, 2.0, 3.0, 4.0, 8.0, 16.0][r.random_range(0..7)];
        let name = format!("layer.{case}");
        let row = make_mask(
            rows,
            cols,
            &DropoutPlan::row_wise(alpha, seed).unwrap(),
            &name,
        );
        let group = make_mask(
            rows,
            cols,
            &DropoutPlan::group_wise(alpha, cols, seed).unwrap(),
            &name,
        );
        if (0..rows).any(|i| (0..cols).any(|j| row.get(i, j) != group.get(i, j))) {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("100 (shape, seed) pairs, {mismatches} differing masks"),
    )
}

// 7

/// Independent SplitMix64 and partial shuffle for the calibration subset.
fn oracle_calib_rows(t: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let mut state = seed ^ 0xC0FF_EE00_CA11_B8A7;
    let mut next = || {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    let n = ((fraction * t as f64).ceil() as usize).clamp(1, t);
    let mut idx: Vec<usize> = (0..t).collect();
    for i in 0..n {
        let span = (t - i) as u64;
        let threshold = span.wrapping_neg() % span;
        let j = loop {
            let v = next();
            if v >= threshold {
                break (v % span) as usize;
            }
        };
        idx.swap(i, i + j);
    }
    let mut rows = idx[..n].to_vec();
    rows.sort_unstable();
    rows
}

fn oracle_proxy_error(
    x: &DenseMatrix,
    base: &ModelCheckpoint,
    delta: &DeltaCheckpoint,
    dropped: &BTreeMap<&str, DenseMatrix>,
) -> f64 {
    let project = |name: &str, d: &DenseMatrix| -> Vec<Vec<f64>> {
        let wb = &base.tensors[name];
        (0..x.rows())
            .map(|p| {
                (0..wb.rows())
                    .map(|q| {
                        (0..x.cols())
                            .map(|c| {
                                f64::from(x.get(p, c))
                                    * (f64::from(wb.get(q, c)) + f64::from(d.get(q, c)))
                            })
                            .sum()
                    })
                    .collect()
            })
            .collect()
    };
    let q = project(PROBE_Q, &delta.tensors[PROBE_Q]);
    let k = project(PROBE_K, &delta.tensors[PROBE_K]);
    let q_hat = project(PROBE_Q, &dropped[PROBE_Q]);
    let k_hat = project(PROBE_K, &dropped[PROBE_K]);
    let mut err = 0.0;
    for a in 0..q.len() {
        for b in 0..k.len() {
            let exact: f64 = q[a].iter().zip(&k[b]).map(|(u, v)| u * v).sum();
            let approx: f64 = q_hat[a].iter().zip(&k_hat[b]).map(|(u, v)| u * v).sum();
            err += (exact - approx) * (exact - approx);
        }
    }
    err
}

fn search_correctness() -> Outcome {
    let toy = toy_transformer(0);
    let delta = split(&toy.base, &toy.finetuned).unwrap();
    let probe = AttentionProbe {
        wq_name: PROBE_Q.into(),
        wk_name: PROBE_K.into(),
        calib: toy.calib.clone(),
    };
    let mut ok = true;
    let mut details = Vec::new();
    for fraction in [DEFAULT_CALIB_FRACTION, 1.0] {
        let x = toy
            .calib
            .select_rows(&oracle_calib_rows(toy.calib.rows(), fraction, 0))
            .unwrap();
        for alpha in [2.0, 4.0, 8.0] {
            let found = search_group_size(&toy.base, &delta, &probe, alpha, 0, fraction).unwrap();
            let mut best: Option<(usize, f64)> = None;
            for h in candidate_group_sizes(alpha, x.cols()).unwrap() {
                let plan = DropoutPlan::group_wise(alpha, h, 0).unwrap();
                let dropped: BTreeMap<&str, DenseMatrix> = [PROBE_Q, PROBE_K]
                    .into_iter()
                    .map(|n| (n, apply_dropout(&delta.tensors[n], &plan, n).to_dense()))
                    .collect();
                let e = oracle_proxy_error(&x, &toy.base, &delta, &dropped);
                if best.is_none_or(|(_, be)| e <= be) {
                    best = Some((h, e));
                }
            }
            let (h, _) = best.unwrap();
            ok &= h == found.best;
            details.push(format!("f={fraction} a={alpha}: {} vs {h}", found.best));
        }
    }
    outcome(ok, format!("search vs brute force: {}", details.join("; ")))
}

// 8

fn oracle_var_range(x: &[f32], w: &[f32]) -> (f64, f64) {
    let ys: Vec<f64> = x
        .iter()
        .zip(w)
        .map(|(&a, &b)| f64::from(a) * f64::from(b))
        .collect();
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    (var, hi - lo)
}

fn balanced_intermediates() -> Outcome {
    let mut total = 0usize;
    let mut smaller = 0usize;
    let mut library_agrees = true;
    for seed in 0..20 {
        let (b, f, x) = noisy_pair(seed, 32, 64, 16, 1.0, 0.01);
        let d = f.sub(&b).unwrap();
        let lib_d = intermediate_stats(&x, &d).unwrap();
        for p in 0..x.rows() {
            for q in 0..d.rows() {
                let (vd, rd) = oracle_var_range(x.row(p), d.row(q));
                let (vf, rf) = oracle_var_range(x.row(p), f.row(q));
                total += 1;
                if vd < vf && rd < rf {
                    smaller += 1;
                }
                let close = |a: f32, b: f64| (f64::from(a) - b).abs() <= 1e-6 * b.abs() + 1e-30;
                library_agrees &=
                    close(lib_d.variance.get(p, q), vd) && close(lib_d.range.get(p, q), rd);
            }
        }
    }
    let frac = smaller as f64 / total as f64;
    outcome(
        frac >= 0.99 && library_agrees,
        format!("{smaller}/{total} = {:.4} elements smaller for the delta; library stats match oracle: {library_agrees}", frac),
    )
}

// 9

fn oracle_loss(x: &DenseMatrix, w: &DenseMatrix, w_hat: &DenseMatrix) -> f64 {
    dense_f64(x, w)
        .iter()
        .zip(dense_f64(x, w_hat))
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn binomial_tail(n: u64, k: u64) -> f64 {
    // P(X >= k) for X ~ Bin(n, 1/2)
    let mut c = 1.0f64;
    let mut tail = 0.0;
    for j in 0..=n {
        if j >= k {
            tail += c;
        }
        c = c * (n - j) as f64 / (j + 1) as f64;
    }
    tail / 2f64.powi(n as i32)
}

fn grouping_benefit() -> Outcome {
    let alpha = 8.0;
    let names = toy_layer_names();
    let (mut wins, mut losses, mut ties) = (0u64, 0u64, 0u64);
    let (mut sum_best, mut sum_row) = (0.0, 0.0);
    for i in 0..20u64 {
        let toy = toy_transformer(100 + i);
        let delta = split(&toy.base, &toy.finetuned).unwrap();
        let probe = AttentionProbe {
            wq_name: PROBE_Q.into(),
            wk_name: PROBE_K.into(),
            calib: toy.calib.clone(),
        };
        let h_star = search_group_size(&toy.base, &delta, &probe, alpha, 0, DEFAULT_CALIB_FRACTION)
            .unwrap()
            .best;
        let name = &names[i as usize % names.len()];
        let w = &delta.tensors[name];
        let mean_loss = |plan_for: &dyn Fn(u64) -> DropoutPlan| {
            (0..50u64)
                .map(|s| {
                    oracle_loss(
                        &toy.calib,
                        w,
                        &apply_dropout(w, &plan_for(s), name).to_dense(),
                    )
                })
                .sum::<f64>()
                / 50.0
        };
        let best = mean_loss(&|s| DropoutPlan::group_wise(alpha, h_star, s).unwrap());
        let row = mean_loss(&|s| DropoutPlan::row_wise(alpha, s).unwrap());
        sum_best += best;
        sum_row += row;
        if best < row {
            wins += 1;
        } else if best > row {
            losses += 1;
        } else {
            ties += 1;
        }
    }
    let p = binomial_tail(wins + losses, wins);
    outcome(
        p < 0.05 && sum_best <= sum_row,
        format!(
            "wins={wins} losses={losses} ties={ties}, sign test p={p:.3e}, mean loss {:.4} (h*) vs {:.4} (row)",
            sum_best / 20.0,
            sum_row / 20.0
        ),
    )
}

// 10

fn random_artifact(r: &mut impl Rng, delta: &DeltaCheckpoint, cols: usize) -> DqArtifact {
    let alpha = [1.0, 2.0, 4.0, 8.0][r.random_range(0..4)];
    let k = r.random_range(1..=8u8);
    let m = 1u32 << r.random_range(0..=k.min(4));
    let divisors: Vec<usize> = (1..=cols).filter(|g| cols.is_multiple_of(*g)).collect();
    let group = if r.random_bool(0.3) {
        GroupChoice::FullRow
    } else {
        GroupChoice::Columns(divisors[r.random_range(0..divisors.len())])
    };
    let opts = CompressOptions {
        alpha,
        group,
        k,
        m,
        seed: r.random(),
        ..Default::default()
    };
    pipeline::compress(delta, None, None, &opts).unwrap().0
}

fn separate_vs_fused() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(10);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let rows = r.random_range(1..=48);
        let cols = r.random_range(1..=64);
        let tokens = r.random_range(1..=16);
        let name = format!("blocks.{case}.proj");
        let mut base = ModelCheckpoint::new("base");
        base.insert(name.clone(), random_dense(&mut r, rows, cols, 1.0));
        let mut ft = ModelCheckpoint::new("ft");
        let d = random_dense(&mut r, rows, cols, 0.01);
        ft.insert(name.clone(), base.tensors[&name].add(&d).unwrap());
        let delta = split(&base, &ft).unwrap();
        let artifact = random_artifact(&mut r, &delta, cols);
        let (bp, ap, xp) = (
            dir.path().join("b.dtc"),
            dir.path().join("a.ddq"),
            dir.path().join("x.dtc"),
        );
        dtc::write(&bp, &base).unwrap();
        ddq::write(&ap, &artifact).unwrap();
        dtc::write_inputs(&xp, &random_dense(&mut r, tokens, cols, 1.0)).unwrap();
        let (sp, fp) = (dir.path().join("s.dtc"), dir.path().join("f.dtc"));
        let common = [
            path_str(&bp),
            path_str(&ap),
            path_str(&xp),
            "--layer",
            &name,
        ];
        run_cli(&[&["forward"][..], &common, &["--out", path_str(&sp)]].concat());
        run_cli(
            &[
                &["forward"][..],
                &common,
                &["--fused", "--out", path_str(&fp)],
            ]
            .concat(),
        );
        let ys = dtc::read(&sp).unwrap().tensors.remove("Y").unwrap();
        let yf = dtc::read(&fp).unwrap().tensors.remove("Y").unwrap();
        let diff = ys.sub(&yf).unwrap().frobenius_sq().sqrt();
        let norm = yf.frobenius_sq().sqrt();
        worst = worst.max(if norm > 0.0 { diff / norm } else { diff });
    }
    outcome(
        worst <= 1e-4,
        format!("100 cases, worst relative Frobenius difference {worst:.3e}"),
    )
}

// 11

fn random_name(r: &mut impl Rng) -> String {
    const PIECES: [&str; 8] = ["layers", "attn", "q_proj", "mlp", "0", "17", "ünï", "w\"x"];
    (0..r.random_range(1..=4))
        .map(|_| PIECES[r.random_range(0..PIECES.len())])
        .collect::<Vec<_>>()
        .join(".")
}

fn random_value(r: &mut impl Rng) -> f32 {
    match r.random_range(0..6) {
        0 => 0.0,
        1 => -0.0,
        2 => f32::from_bits(r.random_range(1..0x0080_0000)),
        3 => loop {
            let v = f32::from_bits(r.random());
            if v.is_finite() {
                break v;
            }
        },
        _ => normal(r) as f32,
    }
}

fn random_checkpoint(r: &mut impl Rng) -> ModelCheckpoint {
    let mut c = ModelCheckpoint::new(random_name(r));
    for _ in 0..r.random_range(0..=3) {
        c.metadata.insert(random_name(r), random_name(r));
    }
    for _ in 0..r.random_range(1..=5) {
        let name = random_name(r);
        if c.tensors.contains_key(&name) {
            continue;
        }
        let cols = r.random_range(1..=20);
        if r.random_bool(0.2) {
            c.insert_vector(name, (0..cols).map(|_| random_value(r)).collect())
                .unwrap();
        } else {
            let rows = r.random_range(1..=20);
            c.insert(
                name,
                DenseMatrix::new(
                    rows,
                    cols,
                    (0..rows * cols).map(|_| random_value(r)).collect(),
                )
                .unwrap(),
            );
        }
    }
    c
}

fn bits_equal(a: &ModelCheckpoint, b: &ModelCheckpoint) -> bool {
    a.name == b.name
        && a.metadata == b.metadata
        && a.vectors == b.vectors
        && a.tensors.len() == b.tensors.len()
        && a.tensors
            .iter()
            .zip(&b.tensors)
            .all(|((na, ta), (nb, tb))| {
                na == nb
                    && ta.shape() == tb.shape()
                    && ta
                        .data()
                        .iter()
                        .zip(tb.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
}

fn random_delta_artifact(r: &mut impl Rng) -> DqArtifact {
    let mut delta = DeltaCheckpoint {
        base_name: random_name(r),
        name: random_name(r),
        ..Default::default()
    };
    let cols = r.random_range(1..=32);
    for _ in 0..r.random_range(1..=4) {
        let rows = r.random_range(1..=24);
        let scale = 10f64.powf(r.random_range(-3.0..0.0));
        delta
            .tensors
            .insert(random_name(r), random_dense(r, rows, cols, scale));
    }
    if r.random_bool(0.3) {
        let name = format!("{}.norm", random_name(r));
        delta
            .tensors
            .insert(name.clone(), random_dense(r, 1, cols, 0.1));
        delta.vectors.insert(name);
    }
    match r.random_range(0..4) {
        0 => pipeline::baseline(
            &delta,
            Method::Magnitude,
            r.random_range(1.0..20.0),
            r.random(),
            &[],
        )
        .unwrap(),
        1 => pipeline::baseline(
            &delta,
            Method::GlobalDropout,
            r.random_range(1.0..20.0),
            r.random(),
            &[],
        )
        .unwrap(),
        _ => {
            let mut a = random_artifact(r, &delta, cols);
            if r.random_bool(0.3) {
                let first = a.layers.keys().next().unwrap().clone();
                let w = delta.tensors[&first].clone();
                a.layers.insert(
                    first,
                    LayerArtifact::Dense {
                        values: w,
                        vector: false,
                    },
                );
            }
            a
        }
    }
}

fn format_round_trips() -> Outcome {
    let mut r = rng(11);
    let mut dtc_bad = 0usize;
    for _ in 0..500 {
        let c = random_checkpoint(&mut r);
        let bytes = dtc::encode(&c).unwrap();
        let back = dtc::decode(&bytes).unwrap();
        if !bits_equal(&c, &back) || dtc::encode(&back).unwrap() != bytes {
            dtc_bad += 1;
        }
    }
    let mut ddq_bad = 0usize;
    for _ in 0..500 {
        let a = random_delta_artifact(&mut r);
        let bytes = ddq::encode(&a).unwrap();
        let back = ddq::decode(&bytes).unwrap();
        if back != a || ddq::encode(&back).unwrap() != bytes {
            ddq_bad += 1;
        }
    }
    outcome(
        dtc_bad == 0 && ddq_bad == 0,
        format!("DTC 500 cases, {dtc_bad} failures; DDQ 500 cases, {ddq_bad} failures"),
    )
}

// 12

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |f: &str| dir.path().join(f);
    let fx = p("fixtures");
    run_cli(&["gen-fixtures", path_str(&fx)]);
    let (base_p, ft_p, calib_p) = (
        fx.join("base.dtc"),
        fx.join("finetuned.dtc"),
        fx.join("calib.dtc"),
    );
    run_cli(&[
        "split",
        path_str(&base_p),
        path_str(&ft_p),
        path_str(&p("delta.dtc")),
    ]);
    run_cli(&[
        "compress",
        path_str(&p("delta.dtc")),
        path_str(&p("model.ddq")),
        "--alpha",
        "8",
        "--group-size",
        "auto",
        "--k",
        "4",
        "--m",
        "8",
        "--base",
        path_str(&base_p),
        "--probe-q",
        PROBE_Q,
        "--probe-k",
        PROBE_K,
        "--calib",
        path_str(&calib_p),
    ]);
    let stats: serde_json::Value =
        serde_json::from_str(&run_cli(&["stats", path_str(&p("model.ddq")), "--json"])).unwrap();
    let cfg = &stats["config"];
    let config_ok = cfg["alpha"] == 8.0 && cfg["k"] == 4 && cfg["m"] == 8;
    let quantized: Vec<&serde_json::Value> = stats["layers"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|l| l["kind"] == "quantized")
        .collect();
    let ratio_ok = quantized.len() == 8 && quantized.iter().all(|l| l["nominal_ratio"] == 128.0);

    run_cli(&[
        "decompress",
        path_str(&p("model.ddq")),
        path_str(&p("delta_hat.dtc")),
    ]);
    run_cli(&[
        "merge",
        path_str(&base_p),
        path_str(&p("delta_hat.dtc")),
        path_str(&p("merged.dtc")),
    ]);
    run_cli(&[
        "merge",
        path_str(&base_p),
        path_str(&p("delta.dtc")),
        path_str(&p("refit.dtc")),
    ]);
    let split_merge_exact = std::fs::read(p("refit.dtc")).unwrap() == std::fs::read(&ft_p).unwrap();

    let base = dtc::read(&base_p).unwrap();
    let delta = split(&base, &dtc::read(&ft_p).unwrap()).unwrap();
    let merged = dtc::read(&p("merged.dtc")).unwrap();
    let artifact = ddq::read(&p("model.ddq")).unwrap();
    let x = dtc::read_inputs(&calib_p).unwrap();
    let plan = match artifact.config.group_size {
        Some(g) => DropoutPlan::group_wise(8.0, g, artifact.config.seed).unwrap(),
        None => DropoutPlan::row_wise(8.0, artifact.config.seed).unwrap(),
    };
    let mut worst_quant = 0.0f64;
    let mut worst_merge = 0.0f64;
    for name in toy_layer_names() {
        let LayerArtifact::Quantized(q) = &artifact.layers[&name] else {
            return outcome(false, format!("layer {name} is not quantized"));
        };
        let s = f64::from(q.params().quant.scale);
        let yp = p("y.dtc");
        run_cli(&[
            "forward",
            path_str(&base_p),
            path_str(&p("model.ddq")),
            path_str(&calib_p),
            "--layer",
            &name,
            "--out",
            path_str(&yp),
        ]);
        let y = dtc::read(&yp).unwrap().tensors.remove("Y").unwrap();
        let wb = &base.tensors[&name];
        let dropped = apply_dropout(&delta.tensors[&name], &plan, &name);
        let (lo, hi) = dropped
            .values()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(f64::from(v)), hi.max(f64::from(v)))
            });
        let per_elem = s / 2.0 + (hi - lo) * 2f64.powi(-20);
        let reference = dense_f64(&x, &wb.add(&dropped.to_dense()).unwrap());
        let via_merge = dense_f64(&x, &merged.tensors[&name]);
        for pi in 0..x.rows() {
            let abs_x: f64 = x.row(pi).iter().map(|&v| f64::from(v).abs()).sum();
            for qi in 0..wb.rows() {
                let mag: f64 = x
                    .row(pi)
                    .iter()
                    .zip(wb.row(qi))
                    .map(|(&a, &b)| (f64::from(a) * f64::from(b)).abs())
                    .sum();
                let slack = 1e-5 * mag + 1e-6;
                let i = pi * wb.rows() + qi;
                let got = f64::from(y.get(pi, qi));
                worst_quant =
                    worst_quant.max((got - reference[i]).abs() / (abs_x * per_elem + slack));
                worst_merge = worst_merge.max((got - via_merge[i]).abs() / slack);
            }
        }
    }
    let ok = config_ok && ratio_ok && split_merge_exact && worst_quant <= 1.0 && worst_merge <= 1.0;
    outcome(
        ok,
        format!(
            "stats alpha/k/m ok: {config_ok}, 8 layers at 128x: {ratio_ok}, split/merge exact: {split_merge_exact}, \
             forward error/bound {worst_quant:.3}, forward vs merged error/slack {worst_merge:.3}"
        ),
    )
}

/// Number, name, time limit in seconds, check.
type Criterion = (u32, &'static str, f64, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        (1, "ratio formula", 1.0, ratio_formula),
        (
            2,
            "decomposition neutrality",
            30.0,
            decomposition_neutrality,
        ),
        (3, "quantization bound", 30.0, quantization_bound),
        (4, "dropout exactness", 30.0, dropout_exactness),
        (5, "unbiasedness", 60.0, unbiasedness),
        (6, "mode equivalence", 10.0, mode_equivalence),
        (7, "search correctness", 60.0, search_correctness),
        (
            8,
            "balanced intermediate results",
            60.0,
            balanced_intermediates,
        ),
        (9, "grouping benefit", 120.0, grouping_benefit),
        (10, "separate computation", 30.0, separate_vs_fused),
        (11, "format round trips", 60.0, format_round_trips),
        (12, "end-to-end pipeline", 120.0, end_to_end),
    ];
    let mut failed = 0;
    for (n, name, budget, f) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let ok = result.ok && secs <= budget;
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {n:>2} {}: {name}: {} [{secs:.2}s, limit {budget}s]",
            if ok { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
