//! Tensors, reverse-mode differentiation and the recognition network.

mod float;
pub mod io;
mod model;
pub mod ops;
mod params;
mod tape;
mod tensor;

pub use float::{gemm, Float};
pub use model::{attention_probs, ForwardTrace, Model, NetConfig, STAGE_STRIDES};
pub use params::{Param, ParamSet};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
