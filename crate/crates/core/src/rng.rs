//! Deterministic splittable random number streams.
//!
//! Every stochastic routine in this crate draws from an [`RngStream`], a
//! counter-based generator built on the SplitMix64 finalizer. A stream is
//! fully determined by `(root_seed, stream indices)`, so campaigns are
//! reproducible bit-for-bit across platforms and thread schedules: path `p`
//! of a campaign always uses the stream derived from the same index tuple,
//! no matter which worker runs it.
//!
//! Construction: each index in the derivation tuple is mixed through the
//! SplitMix64 finalizer and folded into the state with xor/rotate, then the
//! stream advances by the 64-bit golden-ratio increment per draw and outputs
//! the finalizer of the state. The first outputs for the default seed are
//! frozen in a golden test; any change to this algorithm is a breaking
//! change to the reproducibility contract.

/// Default root seed used by the CLI when `--seed` is omitted.
pub const DEFAULT_SEED: u64 = 0x5EED_0000_0000_0001;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const FOLD: u64 = 0x3C6E_F372_FE94_F82A;

/// SplitMix64 finalizer (Stafford variant 13).
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A deterministic random stream identified by a root seed and an index tuple.
#[derive(Debug, Clone)]
pub struct RngStream {
    state: u64,
}

impl RngStream {
    /// Stream for `(root_seed, stream_index)`. Distinct indices give
    /// statistically independent streams.
    pub fn new(root_seed: u64, stream_index: u64) -> Self {
        Self::derive(root_seed, &[stream_index])
    }

    /// Stream addressed by a tuple of indices, e.g. `(purpose, path, reaction, slot)`.
    pub fn derive(root_seed: u64, indices: &[u64]) -> Self {
        let mut state = mix(root_seed.wrapping_add(GOLDEN));
        for (level, &ix) in indices.iter().enumerate() {
            let salted = mix(ix.wrapping_add(FOLD).wrapping_add(level as u64));
            state = mix(state ^ salted.rotate_left(17));
        }
        RngStream { state }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Unit-rate exponential via inversion; `u = 0` is redrawn so the
    /// result is always finite.
    #[inline]
    pub fn unit_exponential(&mut self) -> f64 {
        loop {
            let u = self.next_f64();
            if u > 0.0 {
                return -u.ln();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_outputs_default_seed() {
        // Frozen reproducibility contract: do not update these values.
        let mut s = RngStream::new(DEFAULT_SEED, 0);
        let got: Vec<u64> = (0..4).map(|_| s.next_u64()).collect();
        assert_eq!(
            got,
            vec![
                2055418605440719803,
                3078310114157828966,
                4838834052987474634,
                10927666678286745888,
            ]
        );
    }

    #[test]
    fn identical_construction_is_bit_identical() {
        let mut a = RngStream::derive(42, &[1, 2, 3]);
        let mut b = RngStream::derive(42, &[1, 2, 3]);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = RngStream::new(42, 0);
        let mut b = RngStream::new(42, 1);
        let same = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut s = RngStream::new(7, 0);
        for _ in 0..10_000 {
            let u = s.next_f64();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn exponential_mean_near_one() {
        let mut s = RngStream::new(DEFAULT_SEED, 9);
        let n = 10_000;
        let mean: f64 = (0..n).map(|_| s.unit_exponential()).sum::<f64>() / n as f64;
        assert!((0.97..1.03).contains(&mean), "mean = {mean}");
    }
}
