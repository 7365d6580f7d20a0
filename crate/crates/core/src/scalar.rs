//! Scalar element abstraction: f32 for training and inference, f64 for
//! gradient checking. Keeping the switch at the type level means the whole
//! stack (ops, tape, networks) runs in either precision unchanged.

use std::fmt::{Debug, Display};
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// Floating-point tensor element. Implemented for `f32` and `f64` only.
pub trait Scalar:
    Copy
    + PartialEq
    + PartialOrd
    + Debug
    + Display
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    /// Size of one element in bytes (memory accounting).
    const BYTES: usize;
    /// Smallest positive normal value.
    const MIN_POS: Self;
    /// Largest representable value strictly below one.
    const BELOW_ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn max(self, other: Self) -> Self;
    fn min(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
    /// Raw bit pattern, for bitwise-equality assertions.
    fn bits(self) -> u64;
    /// Inverse of `bits`, reading back the exact stored value.
    fn from_bits(bits: u64) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty, $bytes:expr) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            const BYTES: usize = $bytes;
            const MIN_POS: Self = <$t>::MIN_POSITIVE;
            const BELOW_ONE: Self = 1.0 - <$t>::EPSILON / 2.0;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline]
            fn max(self, other: Self) -> Self {
                <$t>::max(self, other)
            }
            #[inline]
            fn min(self, other: Self) -> Self {
                <$t>::min(self, other)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            #[inline]
            fn bits(self) -> u64 {
                self.to_bits() as u64
            }
            #[inline]
            fn from_bits(bits: u64) -> Self {
                <$t>::from_bits(bits as _)
            }
        }
    };
}

impl_scalar!(f32, 4);
impl_scalar!(f64, 8);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn below_one_is_strictly_below_one() {
        assert!(f32::BELOW_ONE < 1.0);
        assert!(f64::BELOW_ONE < 1.0);
        // Largest such value: the next float up is exactly 1.
        assert_eq!(f32::BELOW_ONE + f32::EPSILON / 2.0, 1.0);
        assert_eq!(f64::BELOW_ONE + f64::EPSILON / 2.0, 1.0);
    }

    #[test]
    fn round_trips_through_f64() {
        let v: f32 = 0.12345678;
        assert_eq!(f32::from_f64(v.to_f64()), v);
    }

    #[test]
    fn bit_patterns_round_trip() {
        for v in [0.0f32, -0.0, 1.5, f32::MIN_POSITIVE, -3.25e-12] {
            assert_eq!(<f32 as Scalar>::from_bits(v.bits()).bits(), v.bits());
        }
        for v in [0.0f64, -1.0, 2.2250738585072014e-308] {
            assert_eq!(<f64 as Scalar>::from_bits(v.bits()).bits(), v.bits());
        }
    }
}
