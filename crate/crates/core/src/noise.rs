//! Seedable base randomness and the fixed-distribution noise sources
//! (Uniform, Gumbel, Logistic) consumed by every reparameterized sampler.
//!
//! # Generator
//!
//! Each [`RngStream`] wraps a ChaCha8 block cipher keyed by the 64-bit seed
//! (expanded with `SeedableRng::seed_from_u64`) and uses the 64-bit ChaCha
//! stream id as `stream_id`. Streams with distinct ids share the key but walk
//! disjoint keystreams of length 2^68 bytes, so they never overlap.
//!
//! Uniforms are produced from the top 52 bits `k` of a 64-bit draw as
//! `(k + 0.5) / 2^52`, which is exact in `f64` and lies in
//! `[2^-53, 1 - 2^-53]`; 0 and 1 are unreachable.
//!
//! # Stream assignment
//!
//! Runs derive every stream from the `--seed` value with the ids in
//! [`streams`]. Child streams are derived purely from `(seed, parent id,
//! child id)` via [`RngStream::child`].

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Fixed stream ids. A run replays bit-identically when the seed and this map
/// are unchanged.
pub mod streams {
    /// Parameter initialization.
    pub const INIT: u64 = 1;
    /// Minibatch shuffling.
    pub const SHUFFLE: u64 = 2;
    /// Reparameterization noise drawn during training steps.
    pub const TRAIN_NOISE: u64 = 3;
    /// Fixed binarization of grey-level images.
    pub const BINARIZE: u64 = 4;
    /// Noise for evaluation passes (discrete and relaxed bounds).
    pub const EVAL_NOISE: u64 = 5;
    /// Synthetic dataset generation.
    pub const SYNTH: u64 = 6;
}

const TWO_POW_M52: f64 = 1.0 / (1u64 << 52) as f64;

/// A deterministic, independently seekable random stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of 32-bit words consumed so far.
    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Derives a child stream. Pure in `(seed, stream_id, child_id)`; the
    /// parent's position is irrelevant.
    pub fn child(&self, child_id: u64) -> RngStream {
        let id = splitmix64(self.stream_id ^ splitmix64(child_id.wrapping_add(0x9E37_79B9_7F4A_7C15)));
        RngStream::new(self.seed, id)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw strictly inside (0, 1).
    pub fn uniform(&mut self) -> f64 {
        let k = self.rng.next_u64() >> 12;
        (k as f64 + 0.5) * TWO_POW_M52
    }

    pub fn gumbel(&mut self) -> f64 {
        gumbel_from_uniform(self.uniform())
    }

    pub fn logistic(&mut self) -> f64 {
        logistic_from_uniform(self.uniform())
    }

    /// Uniform integer in `0..n` (Lemire's multiply-shift with rejection).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.rng.next_u64();
            let m = (x as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    /// Bernoulli draw with success probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Fills a vector with fresh Gumbel draws.
    pub fn gumbels(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.gumbel()).collect()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sample_uniform(rng: &mut RngStream) -> f64 {
    rng.uniform()
}

/// `G = -log(-log U)`.
pub fn sample_gumbel(rng: &mut RngStream) -> f64 {
    rng.gumbel()
}

/// `L = log U - log(1 - U)`.
pub fn sample_logistic(rng: &mut RngStream) -> f64 {
    rng.logistic()
}

pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

pub fn logistic_from_uniform(u: f64) -> f64 {
    u.ln() - (-u).ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, PI};

    #[test]
    fn identical_streams_match() {
        let mut a = RngStream::new(42, 7);
        let mut b = RngStream::new(42, 7);
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = RngStream::new(42, 7);
        let mut b = RngStream::new(42, 8);
        let same = (0..100).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn child_is_pure() {
        let mut parent = RngStream::new(3, 1);
        let c1 = parent.child(9);
        parent.uniform();
        let c2 = parent.child(9);
        assert_eq!(c1.stream_id(), c2.stream_id());
        assert_ne!(parent.child(10).stream_id(), c1.stream_id());
    }

    #[test]
    fn uniform_moments_and_open_interval() {
        let mut rng = RngStream::new(1, streams::TRAIN_NOISE);
        let n = 1_000_000;
        let (mut sum, mut lo, mut hi) = (0.0, 1.0f64, 0.0f64);
        for _ in 0..n {
            let u = rng.uniform();
            sum += u;
            lo = lo.min(u);
            hi = hi.max(u);
        }
        assert!((sum / n as f64 - 0.5).abs() < 0.002);
        assert!(lo > 0.0 && hi < 1.0);
    }

    #[test]
    fn uniform_extremes_are_open() {
        let lo = (0.0 + 0.5) * TWO_POW_M52;
        let hi = (((1u64 << 52) - 1) as f64 + 0.5) * TWO_POW_M52;
        assert!(lo > 0.0);
        assert!(hi < 1.0);
        assert!(gumbel_from_uniform(lo).is_finite() && gumbel_from_uniform(hi).is_finite());
        assert!(logistic_from_uniform(lo).is_finite() && logistic_from_uniform(hi).is_finite());
    }

    #[test]
    fn gumbel_transform_points() {
        assert!(gumbel_from_uniform((-1.0f64).exp()).abs() < 1e-15);
        assert!((gumbel_from_uniform((-E).exp()) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn logistic_transform_points() {
        assert_eq!(logistic_from_uniform(0.5), 0.0);
        assert!((logistic_from_uniform(E / (1.0 + E)) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn gumbel_mean_is_euler_mascheroni() {
        let mut rng = RngStream::new(5, 0);
        let n = 1_000_000;
        let mean = (0..n).map(|_| rng.gumbel()).sum::<f64>() / n as f64;
        assert!((mean - 0.577_215_664_9).abs() < 0.004, "mean {mean}");
    }

    #[test]
    fn logistic_variance() {
        let mut rng = RngStream::new(6, 0);
        let n = 1_000_000usize;
        let xs: Vec<f64> = (0..n).map(|_| rng.logistic()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // Var of the sample variance: (mu4 - sigma^4)/n, mu4 = 7/5 sigma^4 for the Logistic.
        let sigma2 = PI * PI / 3.0;
        let se = ((1.4 - 1.0) * sigma2 * sigma2 / n as f64).sqrt();
        assert!((var - sigma2).abs() < 3.0 * se, "var {var}");
    }

    #[test]
    fn below_is_in_range_and_uniform() {
        let mut rng = RngStream::new(9, 0);
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[rng.below(3)] += 1;
        }
        for c in counts {
            assert!((c as f64 - 10_000.0).abs() < 300.0);
        }
    }
}
