//! Counter-based random streams.
//!
//! A [`Stream`] is a 64-bit key; the k-th draw is a pure function of
//! `(key, k)`. Child streams are derived by hashing a tag into the key, so a
//! replication, a unit or a channel can each own an independent stream with
//! no shared mutable state, and results do not depend on scheduling.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stream {
    key: u64,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix64(seed ^ 0x6a09_e667_f3bc_c908),
        }
    }

    /// Independent child stream identified by `tag`.
    pub fn derive(&self, tag: u64) -> Self {
        Self {
            key: mix64(self.key ^ mix64(tag.wrapping_add(1).wrapping_mul(GOLDEN))),
        }
    }

    #[inline]
    pub fn u64_at(&self, counter: u64) -> u64 {
        mix64(self.key.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform_at(&self, counter: u64) -> f64 {
        ((self.u64_at(counter) >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal draw number `counter` (Box-Muller over two uniforms).
    #[inline]
    pub fn normal_at(&self, counter: u64) -> f64 {
        let u1 = self.uniform_at(2 * counter);
        let u2 = self.uniform_at(2 * counter + 1);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    #[inline]
    pub fn coin_at(&self, counter: u64) -> bool {
        self.u64_at(counter) >> 63 == 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_pure_functions_of_key_and_counter() {
        let s = Stream::new(7).derive(3);
        assert_eq!(s.u64_at(10), Stream::new(7).derive(3).u64_at(10));
        assert_ne!(s.u64_at(10), Stream::new(7).derive(4).u64_at(10));
        assert_ne!(s.u64_at(10), Stream::new(8).derive(3).u64_at(10));
    }

    #[test]
    fn normal_moments() {
        let s = Stream::new(42);
        let m = 200_000;
        let draws: Vec<f64> = (0..m).map(|k| s.normal_at(k)).collect();
        let mean = draws.iter().sum::<f64>() / m as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
        // 5 standard errors
        assert!(mean.abs() < 5.0 / (m as f64).sqrt());
        assert!((var - 1.0).abs() < 5.0 * (2.0 / m as f64).sqrt());
    }

    #[test]
    fn uniform_stays_open() {
        let s = Stream::new(0);
        for k in 0..10_000 {
            let u = s.uniform_at(k);
            assert!(u > 0.0 && u < 1.0);
        }
    }
}
