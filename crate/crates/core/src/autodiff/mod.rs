//! Reverse-mode differentiation over dense real tensors.
//!
//! A [`Tape`] records every primitive executed during a forward pass along
//! with the values its backward rule needs. [`Tape::backward`] walks the
//! record in reverse and returns [`Gradients`] for every node that depends on
//! a leaf created with `requires_grad`. Tapes are rebuilt for each forward
//! pass; parameters live in [`Tensor`]s outside the tape and are copied in as
//! leaves.

mod gemm;
mod gradcheck;
mod lstm;
mod tape;
mod tensor;

pub use gemm::gemm;
pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
pub use lstm::LstmWeights;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
