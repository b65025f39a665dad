//! Pointer-chase chain construction.

use num_integer::Integer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::isa::CacheOp;

use super::GenError;

/// Loads per loop body in the timed chase loop.
pub const CHASE_UNROLL: u32 = 4;
pub(crate) const ELEMENT_BYTES: u32 = 8;
const DEFAULT_SEED: u64 = 0x5eed_c4a5e;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum ChaseLayout {
    /// Seeded pseudo-random single cycle.
    Random { seed: u64 },
    /// `i -> (i + stride) mod n`; needs `gcd(stride, n) == 1`.
    Stride { stride: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointerChaseConfig {
    pub element_count: u64,
    pub element_bytes: u32,
    pub cache_op: CacheOp,
    pub unroll: u32,
    #[serde(flatten)]
    pub layout: ChaseLayout,
}

impl PointerChaseConfig {
    /// Random layout with the default seed.
    pub fn new(element_count: u64, cache_op: CacheOp) -> Self {
        PointerChaseConfig {
            element_count,
            element_bytes: ELEMENT_BYTES,
            cache_op,
            unroll: CHASE_UNROLL,
            layout: ChaseLayout::Random { seed: DEFAULT_SEED },
        }
    }

    pub fn with_layout(mut self, layout: ChaseLayout) -> Self {
        self.layout = layout;
        self
    }

    pub fn footprint_bytes(&self) -> u64 {
        self.element_count * self.element_bytes as u64
    }

    pub fn check(&self) -> Result<(), GenError> {
        let fail = |m: String| Err(GenError::Config(m));
        if self.unroll != CHASE_UNROLL {
            return fail(format!(
                "unroll must be {CHASE_UNROLL}, got {}",
                self.unroll
            ));
        }
        if self.element_bytes != ELEMENT_BYTES {
            return fail(format!(
                "element_bytes must be {ELEMENT_BYTES}, got {}",
                self.element_bytes
            ));
        }
        if self.element_count < self.unroll as u64
            || !self.element_count.is_multiple_of(self.unroll as u64)
        {
            return fail(format!(
                "element_count {} must be a positive multiple of {}",
                self.element_count, self.unroll
            ));
        }
        if let ChaseLayout::Stride { stride } = self.layout {
            if stride == 0 || stride.gcd(&self.element_count) != 1 {
                return fail(format!(
                    "stride {stride} must be coprime with element_count {}",
                    self.element_count
                ));
            }
        }
        Ok(())
    }
}

/// Next-index table: entry `i` holds the index visited after `i`. The
/// result is always one cycle through every element.
pub fn build_chase(config: &PointerChaseConfig) -> Result<Vec<u64>, GenError> {
    config.check()?;
    let n = config.element_count;
    Ok(match config.layout {
        ChaseLayout::Stride { stride } => (0..n).map(|i| (i + stride) % n).collect(),
        ChaseLayout::Random { seed } => {
            // Sattolo's shuffle produces a uniformly random cyclic permutation.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut next: Vec<u64> = (0..n).collect();
            for i in (1..n as usize).rev() {
                let j = rng.gen_range(0..i);
                next.swap(i, j);
            }
            next
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn walk(next: &[u64]) -> (usize, usize) {
        let mut seen = vec![false; next.len()];
        let mut i = 0usize;
        let mut hops = 0;
        let mut returns = 0;
        loop {
            if seen[i] {
                break;
            }
            seen[i] = true;
            i = next[i] as usize;
            hops += 1;
            if i == 0 {
                returns += 1;
            }
        }
        (hops, returns)
    }

    #[test]
    fn smallest_chain_is_a_four_cycle() {
        let next = build_chase(&PointerChaseConfig::new(4, CacheOp::Cv)).unwrap();
        assert_eq!(walk(&next), (4, 1));
    }

    #[test]
    fn stride_layout_has_no_fixed_points() {
        let cfg =
            PointerChaseConfig::new(8, CacheOp::Ca).with_layout(ChaseLayout::Stride { stride: 3 });
        let next = build_chase(&cfg).unwrap();
        assert!(next.iter().enumerate().all(|(i, &n)| i as u64 != n));
        assert_eq!(walk(&next), (8, 1));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(build_chase(&PointerChaseConfig::new(6, CacheOp::Cv)).is_err());
        let cfg =
            PointerChaseConfig::new(8, CacheOp::Cv).with_layout(ChaseLayout::Stride { stride: 2 });
        assert!(build_chase(&cfg).is_err());
        let mut cfg = PointerChaseConfig::new(8, CacheOp::Cv);
        cfg.unroll = 2;
        assert!(build_chase(&cfg).is_err());
    }
}
