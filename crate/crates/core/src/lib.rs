//! Volumetric Rubik's cube pretext tasks: layer-rotation disarrangement of 3D
//! volumes, an adversarial restoration network, and the experiment pipeline
//! that pretrains it and transfers it to segmentation.

pub mod error;
pub mod loss;
pub mod net;
pub mod pipeline;
pub mod rubik;
pub mod seed;
pub mod volume;

pub use error::{Error, Result};
