//! Puzzle thresholds.
//!
//! A threshold `t` lies in `1..=2^256`; a digest read as a big-endian
//! 256-bit integer meets it when `digest < t`. Thresholds are kept in 512
//! bits so `2^256` and stake-scaled products are representable.

use std::fmt;
use std::str::FromStr;

use primitive_types::{U256, U512};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::hash::Hash256;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Target(U512);

fn two_pow_256() -> U512 {
    U512::one() << 256
}

impl Target {
    /// `2^256`: every digest meets it.
    pub fn max() -> Self {
        Target(two_pow_256())
    }

    pub fn zero() -> Self {
        Target(U512::zero())
    }

    /// `2^k`, clamped to `2^256`.
    pub fn pow2(k: u32) -> Self {
        Target(U512::one() << k.min(256))
    }

    pub fn from_u256(v: U256) -> Self {
        Target(U512::from(v))
    }

    /// Threshold giving an expected `interval_ticks` between solutions when
    /// `miners` each try one candidate per tick: `t = 2^256 / (interval * miners)`.
    pub fn for_interval(interval_ticks: u64, miners: u64) -> Self {
        let denom = U512::from(interval_ticks.max(1)) * U512::from(miners.max(1));
        Target((two_pow_256() / denom).max(U512::one()))
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn meets(&self, digest: &Hash256) -> bool {
        U512::from_big_endian(&digest.0) < self.0
    }

    /// `stake * t`, saturating at `2^256`.
    pub fn scaled(&self, stake: u128) -> Self {
        let (p, overflow) = self.0.overflowing_mul(U512::from(stake));
        if overflow || p > two_pow_256() {
            Target::max()
        } else {
            Target(p)
        }
    }

    /// `t / c` rounded down.
    pub fn divided(&self, c: u128) -> Self {
        Target(self.0 / U512::from(c.max(1)))
    }

    /// Expected number of uniformly random candidates until one meets the
    /// threshold, `2^256 / t`.
    pub fn expected_tries(&self) -> f64 {
        if self.0.is_zero() {
            return f64::INFINITY;
        }
        let mut t = self.0;
        let mut shift = 0i32;
        while t.bits() > 60 {
            t >>= 1;
            shift += 1;
        }
        2f64.powi(256 - shift) / t.low_u64() as f64
    }

    pub fn to_hex(&self) -> String {
        format!("{:#x}", self.0)
    }
}

impl fmt::Debug for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Target({})", self.to_hex())
    }
}

impl FromStr for Target {
    type Err = String;

    /// Accepts `0x…` hex, a decimal integer, or `2^k`.
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let v = if let Some(k) = s.strip_prefix("2^") {
            let k: u32 = k.parse().map_err(|e| format!("bad exponent in {s:?}: {e}"))?;
            if k > 256 {
                return Err(format!("threshold {s} exceeds 2^256"));
            }
            U512::one() << k
        } else if let Some(h) = s.strip_prefix("0x") {
            U512::from_str_radix(h, 16).map_err(|e| format!("bad hex threshold {s:?}: {e}"))?
        } else {
            U512::from_dec_str(s).map_err(|e| format!("bad threshold {s:?}: {e:?}"))?
        };
        if v > two_pow_256() {
            return Err(format!("threshold {s} exceeds 2^256"));
        }
        Ok(Target(v))
    }
}

impl Serialize for Target {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Target {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_admits_everything_zero_admits_nothing() {
        let all_ones = Hash256([0xff; 32]);
        assert!(Target::max().meets(&all_ones));
        assert!(!Target::zero().meets(&Hash256::ZERO));
        assert!(Target::pow2(0).meets(&Hash256::ZERO));
    }

    #[test]
    fn scaling_saturates() {
        let t = Target::pow2(250);
        assert_eq!(t.scaled(64), Target::max());
        assert_eq!(t.scaled(1000), Target::max());
        assert_eq!(t.scaled(2), Target::pow2(251));
        assert!(t.scaled(0).is_zero());
    }

    #[test]
    fn parse_forms() {
        assert_eq!("2^252".parse::<Target>().unwrap(), Target::pow2(252));
        assert_eq!("0x10".parse::<Target>().unwrap(), Target::pow2(4));
        assert_eq!("16".parse::<Target>().unwrap(), Target::pow2(4));
        assert!("2^257".parse::<Target>().is_err());
        assert!((Target::pow2(252).expected_tries() - 16.0).abs() < 1e-9);
    }
}
