//! Dense tensors with a recording tape for reverse-mode differentiation.

mod backward;
mod tape;
mod tensor;

pub use backward::GradientMap;
pub use tape::{Activation, NodeId, Tape, Var};
pub use tensor::{matmul, Tensor};
