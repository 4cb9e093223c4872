//! Minimal reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive applied during a forward pass. Calling
//! [`Tape::backward`] on a scalar output walks the record in reverse and
//! accumulates vector-Jacobian products into a [`Gradients`] table, which
//! [`Tape::backward_into`] copies onto the matching entries of a
//! [`ParamStore`].
//!
//! Values are generic over [`Real`], so the same model code runs in `f32`
//! for training and in `f64` for finite-difference checks.

mod gradcheck;
mod optim;
mod params;
mod tape;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

pub use gradcheck::{check_gradients, finite_difference, relative_error, GRADIENT_FLOOR};
pub use optim::{Adam, AdamConfig};
pub use params::{init_parameter, Init, ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};

/// Floating point element type of every tensor.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("non-finite value produced by {op}")]
    NonFiniteValue { op: &'static str },
    #[error("softmax row {row} has no unmasked entries")]
    EmptySoftmaxRow { row: usize },
    #[error("loss must be a 1x1 tensor, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("parameter `{0}` registered twice")]
    DuplicateParameter(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
