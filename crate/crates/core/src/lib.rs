//! Hallucinating motion feature sequences from appearance feature sequences.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`tape`]: dense `f64` tensors and tape-based reverse-mode
//!   differentiation.
//! - [`gradcheck`]: the central-difference oracle used to verify every cell.
//! - [`cells`]: the MoNet unit with its recursive expansion, and GRU, LSTM,
//!   bidirectional, stacked and 1D-conv baselines.
//! - [`optim`] and [`training`]: Adam/SGD, the hallucination objective and a
//!   deterministic sharded training loop with early stopping.
//! - [`classify`]: mean-pooled linear classifiers and two-stream ensembles.
//! - [`data`] and [`checkpoint`]: the synthetic task, MOFE feature files,
//!   manifests, splits and MONW weight files.

pub mod cells;
pub mod checkpoint;
pub mod classify;
pub mod data;
pub mod gradcheck;
pub mod optim;
pub mod tape;
pub mod tensor;
pub mod training;

pub use tape::{Elementwise, Tape, Var};
pub use tensor::{Tensor, TensorError};
