//! Scalar abstraction for the numeric core.
//!
//! The math kernels (`diffmath`, `stability`) are generic over any IEEE float
//! implementing [`Scalar`]. The lab itself runs everything in `f64` (see the
//! [`Real`](crate::Real) alias at the crate root) so that scale-drift
//! diagnostics are not confounded by precision artifacts, but the kernels stay
//! usable at `f32` for quick experiments.

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar usable by the array/graph kernels.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Sum + Debug + Display + Default + 'static
{
    /// Lossless-enough conversion from `f64` literals and config values.
    fn from_f64_lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 literal converts to any Scalar")
    }
    /// Conversion used at IO boundaries (checkpoints, metrics).
    fn into_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_literals() {
        assert_eq!(f64::from_f64_lit(0.25), 0.25);
        assert_eq!(f32::from_f64_lit(0.25), 0.25f32);
        assert_eq!(0.5f64.into_f64(), 0.5);
    }
}
