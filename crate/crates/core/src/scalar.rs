//! Scalar abstraction shared by the numeric kernels.
//!
//! Intensities are stored as `u16`; everything that computes on them
//! (similarity scores, metrics, window weights, the ridge solver) is
//! generic over [`Real`] so the same code runs in `f32` or `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Full-scale value of the stored intensity domain.
pub const U16_MAX_F64: f64 = 65535.0;

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + rustfft::FftNum
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Rounds half-to-even and saturates into the `u16` range. NaN maps to 0.
#[inline]
pub fn to_u16(x: f64) -> u16 {
    if x.is_nan() {
        return 0;
    }
    x.round_ties_even().clamp(0.0, U16_MAX_F64) as u16
}

/// Intensity in `[0, 1]` units.
#[inline]
pub fn unit<R: Real>(v: u16) -> R {
    R::lit(v as f64 / U16_MAX_F64)
}

/// Back from `[0, 1]` units to a stored intensity.
#[inline]
pub fn from_unit<R: Real>(x: R) -> u16 {
    to_u16(x.to_f64_lossy() * U16_MAX_F64)
}

/// `round_half_even(sum / 2^shift)` for a non-negative integer sum.
#[inline]
pub(crate) fn div_pow2_half_even(sum: u64, shift: u32) -> u64 {
    let q = sum >> shift;
    let r = sum & ((1u64 << shift) - 1);
    let half = 1u64 << (shift - 1);
    if r > half || (r == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_even_rounding() {
        assert_eq!(to_u16(32767.5), 32768);
        assert_eq!(to_u16(32766.5), 32766);
        assert_eq!(to_u16(-3.0), 0);
        assert_eq!(to_u16(70000.0), 65535);
        assert_eq!(to_u16(f64::NAN), 0);
    }

    #[test]
    fn integer_mean_rounding_matches_float() {
        for sum in 0..2000u64 {
            let expect = (sum as f64 / 8.0).round_ties_even() as u64;
            assert_eq!(div_pow2_half_even(sum, 3), expect, "sum {sum}");
        }
    }

    #[test]
    fn unit_roundtrip() {
        for v in [0u16, 1, 255, 32768, 65534, 65535] {
            assert_eq!(from_unit::<f64>(unit::<f64>(v)), v);
            assert_eq!(from_unit::<f32>(unit::<f32>(v)), v);
        }
    }
}
