//! Prompt-conditioned encoder–decoder for cross-modality medical image
//! translation, with a small reverse-mode autodiff engine underneath.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub(crate) mod kernels;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod param;
pub mod suite;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use param::{ParamId, ParamStore};
pub use tensor::{DType, Element, Tensor};
