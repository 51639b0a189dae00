//! Learned binary sensing and super-resolving reconstruction for
//! single-pixel imaging.
//!
//! A bank of binary patterns measures a low-resolution view of the scene
//! block by block. A transposed convolution turns the measurements into a
//! preliminary image, and a recursive residual network with sub-pixel
//! upscaling produces the image at full resolution. Patterns and network
//! are trained together.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod hardware;
pub mod io;
pub mod network;
pub mod sensing;
pub mod training;

pub use error::{LshrError, Result};
