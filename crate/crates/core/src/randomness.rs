//! Keyed, counter-based Brownian increments.
//!
//! Every sample path owns a ChaCha8 stream selected purely by its
//! [`StreamKey`]: `(seed, level, role)` form the cipher key and the sample
//! index selects the 64-bit stream id. Nothing is shared between samples, so
//! any partition of sample indices over workers yields the same numbers.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamRole {
    /// Driver of a fine path in a coupled fine/coarse pair.
    Fine,
    /// Driver of an uncoupled path (base level, plain Monte Carlo, references).
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub level: u32,
    pub sample_index: u64,
    pub role: StreamRole,
}

impl StreamKey {
    pub fn new(seed: u64, level: u32, sample_index: u64, role: StreamRole) -> Self {
        Self {
            seed,
            level,
            sample_index,
            role,
        }
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..12].copy_from_slice(&self.level.to_le_bytes());
        key[12] = match self.role {
            StreamRole::Fine => 1,
            StreamRole::Single => 2,
        };
        // domain tag, keeps these streams apart from any other ChaCha use of the seed
        key[24..32].copy_from_slice(b"h32incr\0");
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.sample_index);
        rng
    }

    /// Open-interval uniforms on (0, 1) from this key's stream.
    pub fn uniforms(&self) -> Uniforms {
        Uniforms { rng: self.rng() }
    }
}

pub struct Uniforms {
    rng: ChaCha8Rng,
}

impl Uniforms {
    #[inline]
    pub fn next_open01(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * SCALE
    }
}

impl Iterator for Uniforms {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        Some(self.next_open01())
    }
}

/// Consecutive Brownian increments over steps of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementBlock {
    step_size: f64,
    values: Vec<f64>,
}

impl IncrementBlock {
    pub fn new(step_size: f64, values: Vec<f64>) -> Result<Self> {
        if !(step_size.is_finite() && step_size > 0.0) {
            return Err(Error::InvalidParameter {
                name: "step_size",
                value: step_size,
                reason: "must be finite and strictly positive",
            });
        }
        Ok(Self { step_size, values })
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// W(T) - W(0) by adjacent-pair tree reduction.
    ///
    /// The first reduction round of a fine block is exactly [`coarsen`], so a
    /// fine block and its coarsening report bit-identical sums.
    pub fn brownian_sum(&self) -> f64 {
        let mut level = self.values.clone();
        while level.len() > 1 {
            let carry = (level.len() % 2 == 1).then(|| level[level.len() - 1]);
            let mut next: Vec<f64> = level.chunks_exact(2).map(|w| w[0] + w[1]).collect();
            next.extend(carry);
            level = next;
        }
        level.first().copied().unwrap_or(0.0)
    }
}

/// `n_steps` i.i.d. Normal(0, h) draws via inverse-CDF transform.
pub fn sample_increments(key: StreamKey, n_steps: usize, h: f64) -> Result<IncrementBlock> {
    if n_steps == 0 {
        return Err(Error::domain("n_steps must be at least 1"));
    }
    let normal = Normal::standard();
    let sd = h.sqrt();
    let values = key
        .uniforms()
        .take(n_steps)
        .map(|u| sd * normal.inverse_cdf(u))
        .collect();
    IncrementBlock::new(h, values)
}

/// Pairwise sums of consecutive fine increments: the coarse driver of the
/// same Brownian path at twice the step size.
pub fn coarsen(fine: &IncrementBlock) -> Result<IncrementBlock> {
    if !fine.values.len().is_multiple_of(2) {
        return Err(Error::OddLength(fine.values.len()));
    }
    let values = fine.values.chunks_exact(2).map(|w| w[0] + w[1]).collect();
    IncrementBlock::new(2.0 * fine.step_size, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::Moments;

    fn key(i: u64) -> StreamKey {
        StreamKey::new(2024, 3, i, StreamRole::Fine)
    }

    #[test]
    fn same_key_same_block() {
        let a = sample_increments(key(17), 64, 0.1).unwrap();
        let b = sample_increments(key(17), 64, 0.1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_increments(key(18), 64, 0.1).unwrap());
        let other_role = StreamKey::new(2024, 3, 17, StreamRole::Single);
        assert_ne!(a, sample_increments(other_role, 64, 0.1).unwrap());
        let other_level = StreamKey::new(2024, 4, 17, StreamRole::Fine);
        assert_ne!(a, sample_increments(other_level, 64, 0.1).unwrap());
    }

    #[test]
    fn prefix_stable() {
        let short = sample_increments(key(5), 8, 0.25).unwrap();
        let long = sample_increments(key(5), 32, 0.25).unwrap();
        assert_eq!(short.values(), &long.values()[..8]);
    }

    #[test]
    fn empirical_mean_and_variance() {
        let h = 0.01;
        let n = 1_000_000;
        let block = sample_increments(key(0), n, h).unwrap();
        let m: Moments = block.values().iter().copied().collect();
        assert!(
            m.mean().abs() <= 4.0 * (h / n as f64).sqrt(),
            "mean {}",
            m.mean()
        );
        assert!(
            (m.variance() / h - 1.0).abs() < 0.01,
            "variance {}",
            m.variance()
        );
    }

    #[test]
    fn kolmogorov_smirnov_against_normal() {
        let h = 0.3;
        let n = 100_000;
        let mut xs = sample_increments(key(9), n, h).unwrap().values().to_vec();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let normal = Normal::new(0.0, h.sqrt()).unwrap();
        let mut d: f64 = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            let f = normal.cdf(x);
            d = d
                .max((i + 1) as f64 / n as f64 - f)
                .max(f - i as f64 / n as f64);
        }
        // asymptotic critical value at significance 0.001
        let critical = 1.9495 / (n as f64).sqrt();
        assert!(d < critical, "KS statistic {d} >= {critical}");
    }

    #[test]
    fn neighbouring_sample_streams_uncorrelated() {
        let pairs = 100_000;
        let a = sample_increments(key(100), pairs, 1.0).unwrap();
        let b = sample_increments(key(101), pairs, 1.0).unwrap();
        let r: f64 = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| x * y)
            .sum::<f64>()
            / pairs as f64;
        assert!(r.abs() <= 4.0 / (pairs as f64).sqrt(), "correlation {r}");
    }

    #[test]
    fn coarsen_examples() {
        let fine = IncrementBlock::new(0.25, vec![0.1, -0.2, 0.3, 0.05]).unwrap();
        let coarse = coarsen(&fine).unwrap();
        assert_eq!(coarse.step_size(), 0.5);
        assert_eq!(coarse.len(), 2);
        assert!((coarse.values()[0] + 0.1).abs() < 1e-15);
        assert!((coarse.values()[1] - 0.35).abs() < 1e-15);

        let ab = IncrementBlock::new(1.0, vec![0.7, 1.1]).unwrap();
        assert_eq!(coarsen(&ab).unwrap().values(), &[0.7 + 1.1]);

        let odd = IncrementBlock::new(1.0, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(coarsen(&odd), Err(Error::OddLength(3))));
    }

    #[test]
    fn coarsening_preserves_brownian_sum_bitwise() {
        for n in [2usize, 6, 64, 1024] {
            let fine = sample_increments(key(n as u64), n, 1.0 / n as f64).unwrap();
            let coarse = coarsen(&fine).unwrap();
            assert_eq!(coarse.len(), n / 2);
            assert_eq!(
                fine.brownian_sum().to_bits(),
                coarse.brownian_sum().to_bits()
            );
        }
    }

    #[test]
    fn coarse_variance_doubles() {
        let h = 0.02;
        let fine = sample_increments(key(3), 400_000, h).unwrap();
        let coarse = coarsen(&fine).unwrap();
        let m: Moments = coarse.values().iter().copied().collect();
        assert!((m.variance() / (2.0 * h) - 1.0).abs() < 0.02);
    }

    #[test]
    fn rejects_bad_requests() {
        assert!(sample_increments(key(0), 0, 0.1).is_err());
        assert!(sample_increments(key(0), 4, 0.0).is_err());
        assert!(sample_increments(key(0), 4, -1.0).is_err());
    }
}
