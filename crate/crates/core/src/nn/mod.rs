//! Dense 64-bit numerics with reverse-mode gradients.

mod params;
mod tape;
mod tensor;

pub use params::{AdamConfig, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor2;
