//! Dense-tensor reverse-mode differentiation engine.
//!
//! Values live on a [`Tape`]; every operation appends a node and returns a
//! [`Var`] handle. [`Tape::backward`] walks the tape in reverse and
//! accumulates gradients into every leaf created with [`Tape::param`].
//!
//! The operation set is the one a nested-U saliency network needs:
//! convolution, batch normalization, ReLU/sigmoid, 2×2 max-pooling,
//! bilinear resizing, channel concatenation and a handful of elementwise
//! and reduction ops used to assemble losses.

mod error;
pub mod gradcheck;
mod kernels;
pub mod optim;
mod tape;
mod tensor;

pub use error::TensorError;
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, GradSample};
pub use kernels::{conv_output_extent, pool_output_extent};
pub use optim::{Adam, AdamThenSgd, Hyper, Optimizer, OptimizerState, SgdMomentum};
pub use tape::{BatchNormMode, Conv2dGeom, ResizeMode, RunningStats, Tape, Var, BN_EPS, BN_MOMENTUM};
pub use tensor::Tensor;
