//! Dual-encoder multimodal binary segmentation on 7-band tiles.
//!
//! The pipeline: two hierarchical windowed-attention encoders (one for the
//! RGB bands, one for the auxiliary geophysical bands) produce four-level
//! feature pyramids that are fused per scale, projected to a common width,
//! decoded by a dense nested-skip decoder, and read out as a per-pixel
//! logit map. Training uses a class-weighted BCE + soft Dice objective,
//! AdamW with warmup + cosine decay, and an EMA shadow of the weights;
//! inference averages probability maps over model ensembles and invertible
//! geometric views.

pub mod augment;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod geotiff;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod raw_format;
pub mod rng;
pub mod storage;
pub mod synth;
pub mod tile;

pub use error::{Error, Result};
