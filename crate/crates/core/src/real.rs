//! Scalar abstraction for the model mathematics.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive};

/// Floating-point scalar: `f32` or `f64`.
///
/// Model parameters are stated as `f64` literals; `Real::of` narrows them to
/// the working scalar at the call site.
pub trait Real:
    Float + FloatConst + FromPrimitive + Debug + Display + Sum + Send + Sync + 'static
{
    /// Convert an `f64` constant to the working scalar.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 constant is representable")
    }

    /// Widen to `f64` (exact for `f32`/`f64`), for diagnostics and reports.
    fn widen(self) -> f64 {
        self.to_f64().expect("scalar widens to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
