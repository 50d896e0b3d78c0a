//! Factorized (MERA, tree, tensor-train) fully connected layers, a small
//! reverse-mode autodiff tape, and a CPU harness for training them behind a
//! convolutional stack.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod init;
pub mod layers;
pub mod nn;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
