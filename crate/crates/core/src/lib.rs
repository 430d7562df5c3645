//! Tactile tilt-and-position rendering pipeline: a simulated gripper sensor,
//! bicubic downsizing, a two-head CNN pattern classifier, 3×3 masking and
//! five-bar linkage kinematics for a three-contact palm display.

pub mod cnn;
pub mod config;
pub mod downsample;
pub mod error;
pub mod eval;
pub mod kinematics;
pub mod masks;
pub mod pipeline;
pub mod sensor;
pub mod types;

pub use error::{Error, Result};
