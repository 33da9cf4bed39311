//! Pipeline around `vcm-core`: video and annotation IO, manifests, codec
//! wrappers, training runs, evaluation, reports and the command line.

pub mod annotations;
pub mod backend;
pub mod checkpoint;
pub mod cli;
pub mod codec_ext;
pub mod error;
pub mod evaluate;
pub mod hash;
pub mod manifest;
pub mod postprocess;
pub mod prepare;
pub mod report;
pub mod synth;
pub mod trainer;
pub mod video;

pub use error::{Result, VcmError};
