//! Invertible transforms with log-determinant bookkeeping.

mod affine;
mod temporal;
mod whitening;

pub use affine::{AffineFlow, ConditionedAffine, ConstantAffine, FlowStack};
pub use temporal::TemporalPredictor;
pub use whitening::{fit_cholesky_whitening, fit_zca};
