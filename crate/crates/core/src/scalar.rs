use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar used by every numeric kernel in the crate.
///
/// Implemented for `f32` and `f64`. The pipeline runner itself is pinned to
/// `f64`; the kernels (distances, clustering, the learner, metrics) accept
/// either.
pub trait Real:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + FromStr
    + Send
    + Sync
    + 'static
{
    /// Slack allowed when checking that a probability vector sums to one.
    fn sum_tolerance() -> Self;

    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Real for f64 {
    fn sum_tolerance() -> Self {
        1e-9
    }
}

impl Real for f32 {
    fn sum_tolerance() -> Self {
        1e-5
    }
}
