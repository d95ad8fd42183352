//! Bit-exact random streams for mask generation.
//!
//! The procedure here is part of the artifact contract: any implementation
//! that reproduces it produces identical dropout masks. It is deliberately
//! not delegated to a general-purpose RNG crate, whose streams may change
//! between versions.

/// Golden-ratio increment shared by SplitMix64 and the per-row seed mix.
pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the UTF-8 bytes of `s`.
pub fn fnv1a64(s: &str) -> u64 {
    s.bytes().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform integer in `0..n` by rejection: draws below
    /// `2^64 mod n` are discarded so the remainder is unbiased.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % n;
            }
        }
    }

    /// Runs the first `k` steps of a forward Fisher–Yates shuffle over
    /// `0..n` and returns the resulting prefix. Step `i` swaps position `i`
    /// with `i + below(n - i)`.
    pub fn sample_prefix(&mut self, n: usize, k: usize) -> Vec<usize> {
        let k = k.min(n);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            perm.swap(i, j);
        }
        perm.truncate(k);
        perm
    }

    pub fn shuffle(&mut self, n: usize) -> Vec<usize> {
        self.sample_prefix(n, n)
    }
}

/// Initial SplitMix64 state for one dropout group.
pub fn group_seed(seed: u64, layer_name: &str, row: usize, group: usize) -> u64 {
    seed ^ fnv1a64(layer_name) ^ (row as u64).wrapping_mul(GOLDEN_GAMMA) ^ group as u64
}
