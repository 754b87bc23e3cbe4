//! The GAC-KAN classifier: asymmetric convolution blocks with inference-time
//! fusion, Ghost units with coordinate attention, multi-scale blocks and a
//! B-spline KAN head.

mod acb;
mod attention;
mod block;
mod ghost;
mod kan;
mod model;

pub use acb::{AcbConv, FusedConv, RepConv};
pub use attention::{reduced_width, CoordAttention};
pub use block::MsGacBlock;
pub use ghost::GhostUnit;
pub use kan::{bspline_basis, bspline_basis_with_derivative, kan_l1, KanLayer, SplineGrid};
pub use model::{conv_flops, ArchConfig, FlopReport, GacKanModel};

use crate::nncore::NnError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GacError {
    #[error("invalid architecture: {0}")]
    Config(String),
    #[error("fusion error: {0}")]
    Fusion(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T> = std::result::Result<T, GacError>;
