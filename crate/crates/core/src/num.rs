//! Scalar abstraction. All model math is generic over [`Real`] so the whole
//! stack can run in `f32` or `f64`; the shipped binaries use the `f64`
//! aliases exported from the crate root.

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the simulator is generic over.
///
/// Randomness is always drawn in `f64` and converted through [`Real::of`],
/// so two runs with different scalar types consume identical RNG streams.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    /// Conversion from `f64`, the native precision of configs and RNG draws.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 conversion")
    }

    /// Widen to `f64` for metrics and serialization.
    fn f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("real widens to f64")
    }

    /// Clamp into `[lo, hi]`.
    fn clamp_to(self, lo: Self, hi: Self) -> Self {
        if self < lo {
            lo
        } else if self > hi {
            hi
        } else {
            self
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact_for_f64() {
        let x = f64::of(0.287_f64);
        assert_eq!(x.f64(), 0.287);
    }

    #[test]
    fn f32_conversion_is_lossy_but_close() {
        let x = f32::of(1.995e-13);
        assert!((x.f64() - 1.995e-13).abs() < 1e-19);
    }

    #[test]
    fn clamp_to_bounds() {
        assert_eq!(2.0_f64.clamp_to(0.0, 1.0), 1.0);
        assert_eq!((-2.0_f64).clamp_to(0.0, 1.0), 0.0);
        assert_eq!(0.5_f64.clamp_to(0.0, 1.0), 0.5);
    }
}
