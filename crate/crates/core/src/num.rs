//! Scalar abstraction shared by the maps, the network engine and the models.

use std::fmt;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rand::distributions::uniform::SampleUniform;

/// Floating point element type: `f32` or `f64`.
///
/// Everything numeric in this crate is generic over `Scalar`. The tolerances
/// quoted in tests (1e-12 conjugacy identity, 1e-5 gradient checks) assume
/// `f64`; `f32` builds work but only at single-precision accuracy.
pub trait Scalar:
    Float
    + NumAssign
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + SampleUniform
    + Default
    + fmt::Debug
    + fmt::Display
    + fmt::LowerExp
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Panics only if the target cannot represent
    /// finite `f64` values, which never happens for `f32`/`f64`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Formats a value with 17 significant digits, enough for a bit-faithful
/// `f64` round-trip through text.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}
