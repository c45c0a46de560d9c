//! Converts a monocular video with per-frame depth and optical flow into a
//! stereoscopic pair: depth warping through multi-plane images, frame-matrix
//! diffusion inpainting of the disoccluded regions, and stereo assembly.

pub mod depth;
pub mod diffusion;
pub mod config;
pub mod error;
pub mod imaging;
pub mod matrix;
pub mod pipeline;
pub mod stereo;
pub mod warp;

pub use error::{Error, Result};
