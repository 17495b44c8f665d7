//! Dense-tensor numeric substrate with reverse-mode differentiation.
//!
//! The engine is deliberately small: contiguous row-major buffers, a
//! tape that records every operation, and exact backward rules for each
//! primitive. There is no broadcasting beyond the leading batch
//! dimension and the per-row cases the primitives define; callers
//! reshape explicitly. Training runs in `f32`; the same code
//! instantiates at `f64` for finite-difference validation.

mod element;
mod gradcheck;
mod kernels;
mod optim;
mod tape;
mod value;

pub use element::Element;
pub use gradcheck::{gradient_check, gradient_check_multi};
pub use optim::{AdamW, AdamWConfig};
pub use tape::{Gradients, Tape, Var};
pub use value::Tensor;
