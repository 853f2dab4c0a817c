//! Floating-point abstraction for the numeric core.
//!
//! Everything numeric (models, group-weight updates, metrics, the bootstrap)
//! is generic over [`Scalar`], so the same code runs in `f32` or `f64`. The
//! crate root exports `f64` aliases for the experiment harness and CLI.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use serde::{de::DeserializeOwned, Serialize};

/// Scalar type the numeric core is generic over: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ScalarOperand
    + LinalgScalar
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Display
    + Debug
    + Default
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal or intermediate.
    fn from_f64_lossy(x: f64) -> Self;

    /// Conversion from a count or index.
    fn from_usize_lossy(n: usize) -> Self;
}

impl Scalar for f32 {
    fn from_f64_lossy(x: f64) -> Self {
        x as f32
    }
    fn from_usize_lossy(n: usize) -> Self {
        n as f32
    }
}

impl Scalar for f64 {
    fn from_f64_lossy(x: f64) -> Self {
        x
    }
    fn from_usize_lossy(n: usize) -> Self {
        n as f64
    }
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Inverse of [`sigmoid`]; input must lie strictly in (0, 1).
pub fn logit<T: Scalar>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

/// Clamp a probability to `[floor, 1 - floor]`.
pub fn clip_probability<T: Scalar>(p: T, floor: T) -> T {
    p.max(floor).min(T::one() - floor)
}
