//! Shared-decoder vessel segmentation with residual-pyramid deep supervision.

pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod mask;
pub mod model;
pub mod ops;
pub mod pyramid;
pub mod tensor;
pub mod train;
pub mod verify;

pub use data::FundusSample;
pub use error::{Error, Result};
pub use mask::BinaryMask;
pub use model::{ParameterStore, SideOutput, SpnetConfig};
pub use pyramid::{build_residual_pyramid, ResidualPyramid};
pub use tensor::{Real, Shape, Tensor};
