//! Dense tensors with a reverse-mode gradient tape.
//!
//! Every [`Tensor`] is a reference-counted node. Operations on tensors that
//! require gradients record their parents, forming the tape that
//! [`Tensor::backward`] replays in reverse topological order. Dropping the
//! last handle on a loss releases the whole recorded graph.
//!
//! The element type is generic over [`Float`] so that models train in `f32`
//! while gradient checks run the identical code path in `f64`.

mod error;
mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{check_gradients, GradCheckReport, GradMismatch};
pub use tape::{is_grad_enabled, no_grad, Tape};
pub use tensor::Tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Element type of a tensor.
pub trait Float:
    num_traits::Float + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, used for constants inside kernels.
    fn of(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("f64 constant representable")
    }

    fn to_f64_lossy(self) -> f64 {
        <f64 as num_traits::NumCast>::from(self).unwrap_or(f64::NAN)
    }
}

impl Float for f32 {}
impl Float for f64 {}
