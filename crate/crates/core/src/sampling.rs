//! Seeded draws that give the same result on every platform.
//!
//! ChaCha output is specified bit for bit, and bounded integers are drawn
//! here by rejection over `next_u64` so no library-internal algorithm can
//! shift results between versions.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub struct SeededRng(ChaCha8Rng);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform integer in `0..bound`.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "empty range");
        let zone = u64::MAX - (u64::MAX % bound) - 1;
        loop {
            let x = self.0.next_u64();
            if x <= zone {
                return x % bound;
            }
        }
    }

    /// `k` distinct indices from `0..n` in draw order (partial Fisher-Yates).
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "k = {k} exceeds n = {n}");
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Child seed for a named sub-stream, e.g. one per case.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let digest = crate::sha256_hex(format!("{seed}:{tag}"));
    u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frozen_stream() {
        // Pinned so any change to the generator or the bounded draw is caught.
        let mut r = SeededRng::new(42);
        let got = r.sample_indices(309, 3);
        let mut again = SeededRng::new(42);
        assert_eq!(again.sample_indices(309, 3), got);
        assert_eq!(got, FROZEN_42);
    }

    const FROZEN_42: [usize; 3] = [204, 57, 142];

    #[test]
    fn derive_seed_is_stable_and_tag_sensitive() {
        assert_eq!(derive_seed(42, "c1"), derive_seed(42, "c1"));
        assert_ne!(derive_seed(42, "c1"), derive_seed(42, "c2"));
        assert_ne!(derive_seed(42, "c1"), derive_seed(43, "c1"));
    }

    proptest! {
        #[test]
        fn samples_are_distinct_and_in_range(seed: u64, n in 1usize..200, frac in 0.0f64..=1.0) {
            let k = ((n as f64) * frac).round() as usize;
            let s = SeededRng::new(seed).sample_indices(n, k);
            prop_assert_eq!(s.len(), k);
            let set: std::collections::BTreeSet<_> = s.iter().copied().collect();
            prop_assert_eq!(set.len(), k);
            prop_assert!(s.iter().all(|&i| i < n));
        }

        #[test]
        fn full_sample_is_permutation(seed: u64, n in 1usize..100) {
            let mut s = SeededRng::new(seed).sample_indices(n, n);
            s.sort_unstable();
            prop_assert_eq!(s, (0..n).collect::<Vec<_>>());
        }
    }
}
