//! Dense tensors, reverse-mode gradients and the Adam optimizer.
//!
//! Everything the small fully connected encoders and decoders need and
//! nothing more: affine maps, a handful of elementwise nonlinearities,
//! reductions and binary cross entropy.

mod adam;
mod gradcheck;
mod graph;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::finite_diff_check;
pub use graph::{Gradients, Graph, Var};
pub use tensor::{affine_forward, Tensor};

pub(crate) use graph::{sigmoid, softplus};
