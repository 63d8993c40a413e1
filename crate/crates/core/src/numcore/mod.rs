//! Dense tensors, deterministic kernels, MAC instrumentation and reverse-mode
//! differentiation.

pub mod gradcheck;
pub mod kernels;
mod params;
mod real;
mod tape;
mod tensor;

pub use kernels::{layer_norm, matmul, permute, relu, softmax_lastdim, transpose};
pub use params::{Param, ParamStore, MAGIC};
pub use real::{Dtype, Real};
pub use tape::{backward, MacCounter, Tape, Var};
pub use tensor::Tensor;
