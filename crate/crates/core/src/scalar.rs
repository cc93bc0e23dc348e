//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point type the solvers run on: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssignOps
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal. Every finite `f64` is representable (possibly rounded).
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Tolerance `x`, floored at what this type can resolve around `scale`.
    fn tol(x: f64, scale: Self) -> Self {
        let requested = Self::of(x);
        let floor = Self::epsilon() * Self::of(64.0) * (Self::one() + scale.abs());
        requested.max(floor)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
