//! Generic scalar trait for the numerical core.
//!
//! All geometry, dynamics and neural math is written against [`Real`] so the
//! same code runs in `f32` (the production pipeline) and `f64` (finite
//! difference gradient checks, which need the extra headroom).

use num_traits::{Float, FloatConst, FromPrimitive, NumCast};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + NumCast + Default + std::fmt::Debug + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, for literals in generic code.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 -> Real conversion")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Real -> f64 conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Shorthand for `T::from_f64_lossy` at call sites.
pub fn real<T: Real>(v: f64) -> T {
    T::from_f64_lossy(v)
}
