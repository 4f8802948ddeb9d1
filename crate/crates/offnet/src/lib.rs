//! Off-road freespace detection pipeline.
//!
//! The crate turns a calibrated LiDAR point cloud and an RGB image into a
//! per-pixel traversability map. It packages:
//!
//! - [`tensor`]: a dense `f32` tensor engine with reverse-mode
//!   differentiation and a finite-difference gradient oracle;
//! - [`geometry`]: LiDAR-to-camera projection, sparse-to-dense depth
//!   completion, and surface-normal estimation;
//! - [`dataset`]: sequence scanning, ground-truth decoding, frame loading;
//! - [`model`]: a two-stream hierarchical transformer (RGB + surface normal)
//!   with per-stage gated fusion and an all-MLP decoder;
//! - [`train`]: SGD-with-momentum training with deterministic seeding and
//!   checkpoint selection;
//! - [`eval`]: pixel-wise confusion accounting and the five detection
//!   metrics;
//! - [`synthetic`]: procedurally generated scenes for tests and runnable
//!   examples;
//! - [`cli`]: the `offnet` command-line front end.
//!
//! Every capability has a runnable demonstration under `examples/`.

pub mod cli;
pub mod dataset;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod raster;
pub mod rng;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use tensor::{Tensor, TensorError};
