//! Forward and backward kernels for the layer primitives.
//!
//! These work on plain tensors; [`crate::tape`] records them and wires the
//! backward kernels into reverse-mode differentiation.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod loss;
pub mod norm;
pub mod shape;
