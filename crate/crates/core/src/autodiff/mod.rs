//! Dense double-precision tensors with reverse-mode differentiation.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{
    grad_check, grad_check_params, relative_error, GradCheckReport, DEFAULT_STEP,
    DEFAULT_TOLERANCE,
};
pub use graph::{log_sigmoid, log_sum_exp, sigmoid, Backprop, Graph, Var};
pub use params::{Gradients, Group, ParamEntry, ParamId, ParamSet};
pub use tensor::Tensor;
