//! Object-level SLAM with dual quadric landmarks.
//!
//! Robot poses live in SE(2); every object landmark is a dual quadric stored
//! as a 9-vector with the (4,4) entry of its matrix fixed to one. Bounding
//! box detections become four image lines, and each line contributes the
//! tangency residual `lᵀ P Q* Pᵀ l` to a factor graph that is solved with
//! Levenberg-Marquardt alongside odometry and optional relative-position
//! measurements.
//!
//! The crate also carries the synthetic world simulator, the evaluation
//! metrics, and the batch harness used by the `quadslam` command-line tool.

pub mod error;
pub mod factors;
pub mod geometry;
pub mod harness;
pub mod init;
pub mod metrics;
pub mod simulator;
pub mod solver;

pub use error::{Error, Result};
