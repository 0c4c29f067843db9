//! Minimal neural-network stack: explicit forward/backward layers over a
//! central parameter store, an adaptive-moment optimizer, and a shared
//! checkpoint container.
//!
//! Everything is generic over the float type: training runs in f32, the
//! finite-difference gradient tests run the identical code in f64.

pub mod checkpoint;
mod layers;
mod store;

pub use layers::{
    global_avg_pool2d, global_avg_pool2d_backward, relu, relu_backward, softmax_cross_entropy,
    BatchNorm1d, BnCtx, Conv1d, Conv1dCtx, Conv2d, Conv2dCtx, Linear, LinearCtx,
};
pub use store::{Adam, ParamId, ParamStore};

use ndarray::LinalgScalar;
use num_traits::{Float, NumAssignOps};

/// Float type the stack is generic over.
pub trait Scalar:
    Float + NumAssignOps + LinalgScalar + ndarray::ScalarOperand + std::fmt::Debug + Send + Sync
{
    fn from_f64(v: f64) -> Self;
    // Named to avoid colliding with num_traits::ToPrimitive::to_f64.
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Batch-statistics layers behave differently between training and
/// inference; pure layers ignore the mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
