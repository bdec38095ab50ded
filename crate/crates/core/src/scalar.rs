//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
///
/// Timestamps, weights, features, embeddings and parameters all share one
/// scalar type so a graph and the model trained on it cannot disagree on
/// precision.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Largest representable value strictly below `self`.
    fn pred(self) -> Self;

    /// Converts an `f64` literal, panicking only if the value is not representable at all.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {
    #[inline]
    fn pred(self) -> Self {
        self.next_down()
    }
}

impl Scalar for f64 {
    #[inline]
    fn pred(self) -> Self {
        self.next_down()
    }
}

/// Cosine similarity, defined as zero when either vector has zero norm.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = T::zero();
    let mut na = T::zero();
    let mut nb = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == T::zero() || nb == T::zero() {
        return T::zero();
    }
    let c = dot / (na.sqrt() * nb.sqrt());
    // rounding can push |c| a hair past 1
    c.max(-T::one()).min(T::one())
}

/// Logistic function evaluated without overflow for large |x|.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
