//! Dense `f64` tensors, forward kernels and tape-based reverse-mode
//! differentiation for the operations the transformer needs.

pub mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use kernels::{linear, matmul, rmsnorm, rope_apply, silu, softmax_rows, DEFAULT_ROPE_THETA};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

pub(crate) use kernels::log_sum_exp;
pub(crate) use tape::check_cross_entropy_args;
