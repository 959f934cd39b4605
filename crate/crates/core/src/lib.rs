//! Parallel multi-scale incremental prediction (PMS) for 3D human motion.
//!
//! Observed poses are cut into segments at several temporal scales; first
//! and second differences of those segments (velocity and acceleration
//! increments) are fused, fed through per-scale recurrent branches, and the
//! predicted increments extrapolate the most recent segment. Branch outputs
//! are blended and optionally refined over several adjustment rounds.
//!
//! Module map:
//!
//! - [`numerics`]: tensors, reverse-mode tape, LSTM / batch norm / dropout, Adam
//! - [`dataio`]: the MTF motion text format, normalization, windows, synthetic data
//! - [`increments`]: segmentation, velocity/acceleration differences, fusion
//! - [`model`]: the network, short and long rollouts, model files
//! - [`losses`]: past/current/future L1 terms and MPJPE
//! - [`training`]: multi-stage training, ablation variants, evaluation
//! - [`config`] and [`cli`]: flat `key = value` run configuration and the `pms` tool

pub mod cli;
pub mod config;
pub mod dataio;
pub mod error;
pub mod increments;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
