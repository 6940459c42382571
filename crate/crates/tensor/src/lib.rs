//! Dense CPU tensors with a small tape-based autodiff engine.
//!
//! Only the operations the saliency models need are provided. Everything is
//! single-threaded and evaluated in a fixed order, so results are bitwise
//! reproducible for a given build and platform.

mod graph;
mod optim;
mod params;
mod real;
mod tensor;

pub use graph::{Graph, Var, KL_EPS};
pub use optim::Adam;
pub use params::{Gradients, Param, ParamId, ParamStore};
pub use real::{gemm, Real};
pub use tensor::Tensor;
