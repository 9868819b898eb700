#![no_std]
extern crate alloc;

pub mod align;
pub mod autograd;
pub mod clinical;
pub mod config;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod math;
pub mod molkit;
pub mod nn;
pub mod objective;
pub mod pipeline;
pub mod rng;
pub mod synthgen;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
