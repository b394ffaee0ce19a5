//! XceptionTime for sparse multichannel sEMG gesture recognition.
//!
//! A dependency-light, `no_std` (+`alloc`) implementation of the full stack:
//! tape-based reverse-mode differentiation, the convolutional building blocks,
//! the XceptionTime network and its plain-convolution variant, the signal
//! preprocessing chain, dataset handling and the training loop.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
mod gemm;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub(crate) mod math;
pub mod params;
pub mod signal;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tape::{backward, Tape, Var};
pub use tensor::Tensor;
