//! Minimal reverse-mode automatic differentiation with gated parameter groups.

mod gemm;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{central_difference, grad_check, max_relative_error, relative_error};
pub use optim::sgd_momentum_step;
pub use params::{GroupSet, Param, ParamGroup, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
