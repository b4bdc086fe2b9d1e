//! Temporal-windowed MLP for generating 22-joint full-body motion from three
//! sparse trackers (headset and two hand controllers).
//!
//! The crate is organized bottom-up:
//!
//! - [`rotmath`]: rotation matrices, 6D encoding, axis-angle, geodesic angle
//! - [`tensor`]: a small dense tensor with a reverse-mode tape
//! - [`featurize`]: 54-dim per-frame tracker features and window assembly
//! - [`kinematics`]: fixed 22-joint tree and forward kinematics
//! - [`model`]: the network, analytic cost counting, checkpoints
//! - [`objective`]: rotation, rotation-velocity and regularization losses
//! - [`metrics`]: MPJRE / MPJPE / MPJVE / jitter / part errors
//! - [`datagen`]: synthetic clips, tracker streams, MOTN files, splits
//! - [`trainer`]: AdamW, training loop, evaluation driver
//! - [`runtime`]: streaming sessions and latency benchmarking

pub mod datagen;
pub mod error;
pub mod exec;
pub mod featurize;
pub mod kinematics;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod rotmath;
pub mod runtime;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
