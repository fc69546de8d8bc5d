//! Training engine for a shared-encoder, multi-headed unpaired
//! image-to-image translation model pre-trained on self-supervised
//! pretext tasks (rotation, jigsaw, depth, colorization) under four
//! schedules: a translation-only baseline, parallel multi-task training,
//! a threshold-gated sequential curriculum, and a continual curriculum
//! that distills toward an exponential moving average of past encoders
//! to prevent catastrophic forgetting.

pub mod ckpt;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod nets;
pub mod optim;
pub mod schedule;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};
