//! Scalar abstraction for the numeric pipeline.
//!
//! Every stage (color conversion, density estimation, the eigensolver, the
//! labeling energies) is written against [`Real`] so the whole pipeline can
//! run in either `f32` or `f64`. Concrete aliases for both live at the crate
//! root; the CLI instantiates `f64`.

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar the pipeline is generic over.
///
/// The `nalgebra::RealField` bound is what lets dense decompositions
/// (Cholesky, QR, symmetric eigen) run on the same scalar. Modules should
/// bring only `num_traits::Float` into method scope so calls like `x.sqrt()`
/// stay unambiguous.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + nalgebra::RealField
    + Default
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + nalgebra::RealField
        + Default
        + std::iter::Sum
        + Send
        + Sync
        + 'static
{
}

/// Shorthand for converting an `f64` literal into the working scalar.
///
/// Conversion of ordinary constants never fails for `f32`/`f64`; values that
/// underflow map to zero, which is the behavior the call sites want.
#[inline]
pub fn flt<F: Real>(v: f64) -> F {
    F::from_f64(v).expect("f64 literal convertible to scalar")
}

/// Converts a count into the working scalar.
#[inline]
pub fn count<F: Real>(n: usize) -> F {
    F::from_usize(n).expect("usize convertible to scalar")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn generic_sum<F: Real>(xs: &[f64]) -> F {
        xs.iter().map(|&x| flt::<F>(x)).sum()
    }

    #[test]
    fn both_precisions_satisfy_real() {
        assert_eq!(generic_sum::<f32>(&[1.0, 2.0]), 3.0f32);
        assert_eq!(generic_sum::<f64>(&[1.0, 2.0]), 3.0f64);
        assert_eq!(count::<f64>(42), 42.0);
    }
}
