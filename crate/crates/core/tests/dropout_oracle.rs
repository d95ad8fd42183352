//! Masks checked against a from-scratch implementation of the sampling
//! procedure: FNV-1a layer hash, SplitMix64 group streams, rejection-sampled
//! bounded draws and a forward partial Fisher-Yates shuffle.

use deltacomp::{make_mask, DropoutPlan};
use proptest::prelude::*;

fn fnv(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

struct Sm(u64);

impl Sm {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    fn below(&mut self, n: u64) -> u64 {
        let limit = (u64::MAX - n + 1) % n;
        loop {
            let v = self.next();
            if v >= limit {
                return v % n;
            }
        }
    }
}

fn oracle(rows: usize, cols: usize, alpha: f64, width: usize, seed: u64, layer: &str) -> Vec<bool> {
    let mut out = vec![false; rows * cols];
    for r in 0..rows {
        for (g, start) in (0..cols).step_by(width).enumerate() {
            let len = width.min(cols - start);
            let keep = (len as f64 / alpha).round_ties_even() as usize;
            let mut s =
                Sm(seed ^ fnv(layer) ^ (r as u64).wrapping_mul(0x9e3779b97f4a7c15) ^ g as u64);
            let mut perm: Vec<usize> = (0..len).collect();
            for i in 0..keep.min(len) {
                let j = i + s.below((len - i) as u64) as usize;
                perm.swap(i, j);
            }
            for &i in &perm[..keep.min(len)] {
                out[r * cols + start + i] = true;
            }
        }
    }
    out
}

#[test]
fn reference_group_has_known_survivors() {
    let plan = DropoutPlan::group_wise(2.0, 4, 0).unwrap();
    let m = make_mask(1, 4, &plan, "");
    let got: Vec<bool> = (0..4).map(|c| m.get(0, c)).collect();
    // seed 0, empty layer name: the shuffle prefix is [0, 2]
    assert_eq!(got, vec![true, false, true, false]);
    assert_eq!(got, oracle(1, 4, 2.0, 4, 0, ""));
}

proptest! {
    #[test]
    fn group_wise_matches_oracle(
        rows in 1usize..12,
        cols in 1usize..80,
        width in 1usize..40,
        alpha in prop::sample::select(vec![1.0, 1.5, 2.0, 3.0, 4.0, 8.0, 16.0]),
        seed in any::<u64>(),
        layer in "[a-z0-9._]{0,24}",
    ) {
        let plan = DropoutPlan::group_wise(alpha, width, seed).unwrap();
        let m = make_mask(rows, cols, &plan, &layer);
        let want = oracle(rows, cols, alpha, width, seed, &layer);
        for r in 0..rows {
            for c in 0..cols {
                prop_assert_eq!(m.get(r, c), want[r * cols + c], "row {} col {}", r, c);
            }
        }
    }

    #[test]
    fn row_wise_is_one_group_per_row(
        rows in 1usize..12,
        cols in 1usize..80,
        alpha in prop::sample::select(vec![1.0, 2.0, 4.0, 8.0]),
        seed in any::<u64>(),
    ) {
        let plan = DropoutPlan::row_wise(alpha, seed).unwrap();
        let m = make_mask(rows, cols, &plan, "w");
        let want = oracle(rows, cols, alpha, cols, seed, "w");
        for r in 0..rows {
            for c in 0..cols {
                prop_assert_eq!(m.get(r, c), want[r * cols + c]);
            }
        }
    }
}
