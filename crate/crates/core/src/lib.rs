//! Video imagination from a single image.
//!
//! An encoder turns the input image into a condition code; a generator maps
//! (code, latent) to sequences of image transformations; the transformations
//! are applied cumulatively and merged per pixel into frames; a video critic
//! scores clips for Wasserstein adversarial training.

pub mod error;
pub mod tensor;
pub mod transform;
pub mod nets;
pub mod data;
pub mod train;
pub mod checkpoint;
pub mod suites;

pub use error::{Error, Result};
