//! Scalar abstraction for the numeric core.
//!
//! Everything numerical in this crate is generic over [`Real`] so the same
//! algorithms run in `f32` or `f64`. The simulation front end instantiates
//! `f64`; `f32` mainly exists for embedded-style porting experiments and for
//! catching precision assumptions in tests.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar usable by the control and estimation code.
///
/// This is a plain capability bundle on top of `num-traits`; it adds no
/// methods of its own.
pub trait Real:
    num_traits::Float
    + num_traits::FloatConst
    + num_traits::NumAssign
    + num_traits::FromPrimitive
    + num_traits::Euclid
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Shorthand for pulling an `f64` literal into the working scalar type.
///
/// Panics only if the target type cannot represent any `f64` at all, which
/// does not happen for the provided impls.
#[inline]
pub fn lit<S: Real>(x: f64) -> S {
    S::from_f64(x).expect("literal conversion")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_convert_to_both_widths() {
        let a: f32 = lit(0.5);
        let b: f64 = lit(0.5);
        assert_eq!(a, 0.5f32);
        assert_eq!(b, 0.5f64);
    }
}
