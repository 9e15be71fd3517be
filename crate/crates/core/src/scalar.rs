//! Floating-point element type for model and optimizer math.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// f32 or f64.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + ToPrimitive + LinalgScalar + ScalarOperand + Sum + Debug + Display + Send + Sync + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every float type")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
