#![no_std]

extern crate alloc;

pub mod autograd;
pub mod codec;
pub mod error;
pub mod evaluator;
pub mod head;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod motion;
pub mod nn;
pub mod noise;
pub mod rng;
pub mod tensor;
pub mod training;
pub mod text;
pub mod transformer;
pub mod vae;

pub use error::{Error, Result};
pub use tensor::Tensor;
