//! Network kernels with hand-written backward passes.
//!
//! Every layer follows the same protocol: `forward` returns the output and a
//! cache, `backward` consumes the cache and the output gradient, accumulates
//! parameter gradients in place and returns the input gradient.

mod adam;
mod conv;
mod dense;
mod gradcheck;
mod gru;
mod init;
pub mod ops;
mod param;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use conv::{
    BatchNorm2d, BatchNormCache, Conv2d, ConvBlock, ConvBlockCache, MaxPool2d, PoolCache,
    ResidualBlock, ResidualCache,
};
pub use dense::{DenseBlock, DenseBlockCache, DenseLayer, DenseLayerCache, Linear};
pub use gradcheck::{finite_difference_check, GradCheckOptions, GradCheckReport, ParamCheck};
pub use gru::{BiGru, BiGruCache, GruDirection};
pub use init::{kaiming_uniform, orthogonal};
pub use param::{Module, Parameter};

use thiserror::Error;

/// Train mode uses batch statistics and dropout; eval mode is deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("{op}: shape mismatch, expected {expected}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: Vec<usize>,
    },
    #[error("batch norm `{0}` evaluated before any running-statistics update")]
    UntrackedBatchNorm(String),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("loss is not deterministic: {first} then {second}")]
    NonDeterministicLoss { first: f64, second: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub(crate) fn expect_rank<T>(
    op: &'static str,
    t: &crate::Tensor<T>,
    rank: usize,
) -> Result<(), NnError>
where
    T: crate::Scalar,
{
    if t.ndim() != rank {
        return Err(NnError::ShapeMismatch {
            op,
            expected: format!("rank {rank}"),
            got: t.shape().to_vec(),
        });
    }
    Ok(())
}
