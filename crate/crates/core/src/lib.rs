//! Multimodal (text, video, audio) classifier built on frozen encoders.
//!
//! Only per-layer prompt tokens in the text and vision transformers, the
//! audio projection and the logit scale are trained. Everything else is
//! initialized once from a seed and never changes.

pub mod audio;
pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod rng;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
