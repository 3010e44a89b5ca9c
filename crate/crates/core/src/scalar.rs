//! Scalar abstraction for the deterministic linear-algebra layer.
//!
//! Simulation, quadratic costs and the Riccati recursion are written once
//! over [`Scalar`] and instantiated for `f32` and `f64`. The statistical
//! layers (sampling, bounds, KL divergences) work in `f64` only.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar usable by the generic dynamics and cost code.
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive {
    /// Converts an `f64` literal or parameter into this scalar type.
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
