//! Scalar abstraction for thresholds, leaf values and performance-model arithmetic.

use std::fmt::{Debug, Display};

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar usable for model values: `f32` or `f64`.
///
/// The fixed-point datapath never touches this type; it only appears where the
/// model carries real numbers (thresholds, leaves, base score) and in the
/// performance models.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + num_traits::NumAssign
    + std::iter::Sum
    + Default
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Lossless for `f32`/`f64` since both widen exactly.
    fn to_f64_exact(self) -> f64 {
        self.to_f64().expect("float widens to f64")
    }

    /// Rounds to nearest for narrower types.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 narrows to float")
    }

    /// Shorthand for literals in generic code.
    fn lit(v: f64) -> Self {
        Self::from_f64_lossy(v)
    }
}

impl Real for f32 {}
impl Real for f64 {}
