//! Minimal reverse-mode differentiable compute core.
//!
//! Provides exactly the tensor operations the reconstruction and fitting
//! networks need (3x3 same-convolution, fully connected layers, ReLU,
//! inverted dropout, MSE and heteroscedastic Gaussian NLL losses), a
//! define-by-run tape with reverse accumulation, global-norm gradient
//! clipping and the Adam optimizer. Deliberately not a general autodiff
//! package: no broadcasting, no dynamic rank, CPU only.

pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod real;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use optim::{adam_step, clip_grad_norm, AdamState};
pub use real::Real;
pub use rng::{purpose, RngStream};
pub use tape::{NodeId, Tape, TapeOp};
pub use tensor::{DiffError, Tensor};
