//! Differentiable test-time augmentation.
//!
//! A small backbone predicts, per image, magnitudes and blend weights over a
//! catalog of differentiable augmentations; the blended result is fed to a
//! frozen classifier and the whole pipeline is trained with its loss.

pub mod augment;
pub mod checkpoint;
pub mod classifier;
pub mod corrupt;
pub mod diffcore;
pub mod error;
pub mod estimate;
pub mod gradsuite;
pub mod head;
pub mod params;
pub mod train;

pub use error::{Error, Result};
