//! Lightweight distilled conv feature encoder for wake-word detection.
//!
//! A frozen full-width conv feature encoder (the teacher) is compressed by a
//! linear auto-encoder and distilled into a width-reduced student. A causal
//! dilated-conv detector head is then fine-tuned on top of the frozen
//! student, optionally guided by a teacher detector's last-layer outputs,
//! and evaluated as false-rejection rate at a false-alarm-per-hour budget.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dsp;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod features;
pub mod init;
pub mod pipeline;
pub mod tensor;
pub mod training;
pub mod workflow;
pub mod wwd;

pub use error::{Error, Result};
pub use features::FeatureMap;
