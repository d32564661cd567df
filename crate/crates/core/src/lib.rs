//! Image motion-deblurring engine: a channel-attention encoder-decoder
//! transformer, its training math and its evaluation metrics.
//!
//! The crate is `no_std` (with `alloc`); file IO, configuration and the
//! command-line front end live in the companion `deblur` crate.

#![no_std]

extern crate alloc;

pub mod augment;
pub mod autograd;
mod conv;
pub mod error;
pub mod fft;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use autograd::{Tape, Var};
pub use error::{Error, Result};
pub use image::Image;
pub use model::ModelConfig;
pub use params::ParamStore;
pub use scalar::Real;
pub use tensor::Tensor;
