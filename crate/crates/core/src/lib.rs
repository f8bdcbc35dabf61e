//! Super-resolution of grayscale micro-CT rock images with an EDSR generator
//! trained first on pixel loss, then adversarially against a convolutional
//! discriminator with a frozen VGG-style perceptual loss.
//!
//! Everything runs on a small in-crate tensor library with reverse-mode
//! differentiation; no external ML runtime is needed.

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod imaging;
pub mod losses;
pub mod models;
pub mod param;
pub mod rng;
pub mod tape;
pub mod train;
pub mod tensor;

pub use error::{CheckpointError, Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Real, Tensor};
