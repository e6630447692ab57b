//! Audio, head pose and blink to talking-face reenactment.
//!
//! Stage one predicts facial landmarks from an MFCC window plus pose and
//! blink conditions. Stage two renders those landmarks to a binary image and
//! translates it into a face with an encoder-decoder generator.

pub mod array_file;
pub mod audio;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod objectives;
pub mod pipeline;
pub mod reenact;
pub mod render;
pub mod train;

pub use error::{Error, Result};

/// Tag written into manifests, checkpoints and reports.
pub const PIPELINE_VERSION: &str = concat!("apbface-", env!("CARGO_PKG_VERSION"));
