//! Minimal tensor engine with layer-level reverse-mode differentiation, the
//! AdamW optimizer and the warmup-cosine schedule.

pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use layers::{
    join, param_count, state_dict, zero_grads, BatchNorm, Conv2d, ConvBnAct, GlobalAvgPool, Mode,
    Module, Pool2d, Sequential, Sigmoid, Silu, StateKind,
};
pub use ops::{ConvGeometry, PoolKind};
pub use optim::{AdamW, AdamWConfig, LrSchedule};
pub use tensor::{concat_channels, split_channels, Scalar, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("mode error: {0}")]
    Mode(String),
    #[error("training error: {0}")]
    Training(String),
}

pub type Result<T> = std::result::Result<T, NnError>;
