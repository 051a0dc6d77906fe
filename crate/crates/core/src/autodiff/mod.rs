//! Reverse-mode automatic differentiation over `f64` tensors.
//!
//! A [`Tape`] is built fresh for every forward pass. Parameters live in a
//! [`ParamStore`]; [`Tape::param`] copies them onto the tape and
//! [`Tape::backward`] adds their gradients back into the store, where
//! [`Adam`] consumes them.

mod gradcheck;
mod kernels;
mod optim;
mod param;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_report, GradCheckOpts, GradCheckReport};
pub use optim::{plateau_lr, Adam, PlateauScheduler};
pub use param::{kaiming_uniform, orthogonal, uniform, ParamId, ParamStore, Parameter};
pub use tape::{ConvOpts, Gradients, Tape, Var, BN_EPS, BN_MOMENTUM};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{0}")]
    InvalidArgument(String),
}
