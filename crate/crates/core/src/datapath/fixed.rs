//! Q8.24 leaf storage with a 64-bit accumulator.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const FRAC_BITS: u32 = 24;
const SCALE: f64 = (1u64 << FRAC_BITS) as f64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FxpFormat {
    pub leaf_bits: u32,
    pub frac_bits: u32,
    pub acc_bits: u32,
}

impl Default for FxpFormat {
    fn default() -> Self {
        FxpFormat {
            leaf_bits: 32,
            frac_bits: FRAC_BITS,
            acc_bits: 64,
        }
    }
}

impl FxpFormat {
    /// Exclusive bound on representable leaf magnitudes (2^7 for Q8.24).
    pub fn leaf_limit(&self) -> f64 {
        f64::from(1u32 << (self.leaf_bits - 1 - self.frac_bits))
    }
}

/// Signed fixed-point value with [`FRAC_BITS`] fractional bits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fixed(pub i64);

impl Fixed {
    pub const ZERO: Fixed = Fixed(0);

    pub fn raw(self) -> i64 {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / SCALE
    }

    /// Round-half-to-even onto the 2^-24 grid; `None` if the result does not
    /// fit an `i64`.
    pub fn from_f64(v: f64) -> Option<Fixed> {
        let q = (v * SCALE).round_ties_even();
        (q.is_finite() && q >= i64::MIN as f64 && q < i64::MAX as f64).then_some(Fixed(q as i64))
    }

    /// Little-endian two's-complement wire encoding.
    pub fn to_le_bytes(self) -> [u8; 8] {
        self.0.to_le_bytes()
    }

    pub fn from_le_bytes(b: [u8; 8]) -> Fixed {
        Fixed(i64::from_le_bytes(b))
    }
}

impl fmt::Display for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

/// Q8.24 leaf: `None` when `|v| >= 128` or rounding leaves the i32 range.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn quantize_leaf(v: f64) -> Option<i32> {
    if !(v.abs() < FxpFormat::default().leaf_limit()) {
        return None;
    }
    let q = Fixed::from_f64(v)?.0;
    i32::try_from(q).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_rounding_is_half_even() {
        let ulp = 1.0 / SCALE;
        assert_eq!(quantize_leaf(0.5 * ulp), Some(0));
        assert_eq!(quantize_leaf(1.5 * ulp), Some(2));
        assert_eq!(quantize_leaf(2.5 * ulp), Some(2));
        assert_eq!(quantize_leaf(-2.5 * ulp), Some(-2));
        assert_eq!(quantize_leaf(-1.0), Some(-(1 << 24)));
        assert_eq!(quantize_leaf(2.0), Some(2 << 24));
    }

    #[test]
    fn leaf_range() {
        assert_eq!(quantize_leaf(128.0), None);
        assert_eq!(quantize_leaf(-128.0), None);
        assert_eq!(quantize_leaf(f64::NAN), None);
        // just under the limit rounds up to 2^31, which does not fit
        assert_eq!(quantize_leaf(128.0 - 1e-12), None);
        assert_eq!(quantize_leaf(-128.0 + 1e-12), Some(i32::MIN));
        assert!(quantize_leaf(127.99).is_some());
    }

    #[test]
    fn accumulator_headroom() {
        // 2^k trees of extreme leaves never overflow the 64-bit accumulator
        let padded: i64 = 1 << 20;
        assert!(padded.checked_mul(1 << 31).is_some());
    }

    #[test]
    fn wire_bytes() {
        let v = Fixed(-2);
        assert_eq!(v.to_le_bytes(), [0xFE, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF]);
        assert_eq!(Fixed::from_le_bytes(v.to_le_bytes()), v);
    }
}
