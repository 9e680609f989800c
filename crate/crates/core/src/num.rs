//! Scalar abstraction shared by the geometry and lattice code.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point type the closed-form geometry is written against.
///
/// Implemented for `f32` and `f64`. The simulator itself runs on `f64`;
/// see the aliases at the crate root.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Relative slack used when a closed-ball or floor test lands exactly on
    /// a lattice boundary.
    fn boundary_slack() -> Self;

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal fits scalar")
    }

    fn sqrt3() -> Self {
        Self::lit(3.0).sqrt()
    }
}

impl Scalar for f32 {
    fn boundary_slack() -> Self {
        2e-5
    }
}

impl Scalar for f64 {
    fn boundary_slack() -> Self {
        1e-9
    }
}
