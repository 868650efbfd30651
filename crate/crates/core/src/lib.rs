//! Spatio-temporal attention LSTM for skeleton action recognition.
//!
//! A tape-based reverse-mode autodiff engine over dense `f64` tensors, the
//! gated recurrent building blocks, the two attention subnetworks, the
//! composite model, its regularized objective and the staged trainer.
//! Works without `std`; IO lives in the companion `sta` crate.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod attention;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod lstm;
pub mod math;
pub mod model;
pub mod objective;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use model::{Forward, ModelShape, StaModel};
pub use tensor::Tensor;
pub use train::{joint_train, TrainConfig, TrainPlan, Variant};
