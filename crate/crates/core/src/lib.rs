//! Allocation-only core of the `vcm` toolkit.
//!
//! Everything here is pure computation over in-memory buffers: the RRDB
//! post-processing network and its hand-written backward pass, the
//! detector-backend abstraction with a differentiable toy backbone, the
//! feature-matching loss and Adam, the BT.709 colour conversion and the mock
//! quantizing codec, and the detection-accuracy metrics. File formats, process
//! management and the command line live in the `vcm` crate.

#![no_std]
#![warn(rust_2018_idioms)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod codec;
pub mod data;
pub mod detector;
mod error;
pub mod metrics;
pub mod net;
mod real;
mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::{Frame, Tensor};
