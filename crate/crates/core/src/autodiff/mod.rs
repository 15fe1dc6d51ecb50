//! Numeric substrate: dense tensors, CSR matrices, a reverse-mode tape and Adam.

mod activation;
mod adam;
mod sparse;
mod tape;
mod tensor;

pub use activation::{Activation, LEAKY_RELU_SLOPE};
pub use adam::{AdamConfig, AdamState};
pub use sparse::SparseMatrix;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
