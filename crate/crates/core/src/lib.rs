//! Dendrite-augmented neural networks.
//!
//! The crate bundles a small reverse-mode autodiff engine, fully connected
//! and 3x3 convolutional networks with width multipliers, the perforated
//! training loop that grows frozen dendrite units on hidden neurons, and the
//! experiment and deployment-cost tooling built on top of them.

pub mod autograd;
pub mod data;
pub mod deploy;
pub mod error;
pub mod experiment;
pub mod network;
pub mod pb;
pub mod rng;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::Tensor;
