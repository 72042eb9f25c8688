//! A minimal differentiable layer stack on `f64` tensors.
//!
//! Forward passes record onto a [`Tape`]; [`Tape::backward`] then walks the
//! records in reverse to produce gradients for every parameter. Layers are
//! assembled into a [`LayerGraph`], trained with [`Adam`] and persisted with
//! the text checkpoint format in [`checkpoint`].

pub mod checkpoint;
mod error;
mod gemm;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod optim;
pub mod tape;
mod tensor;

pub use error::{NnError, Result};
pub use graph::{Activation, LayerGraph, LayerKind, Mode};
pub use optim::Adam;
pub use tape::{ConvLstmParams, Padding, ParamStore, Tape, Var};
pub use tensor::Tensor;
