//! Multi-resolution attention feature fusion for small-object detection.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors, a reverse-mode autograd tape, momentum SGD
//!   and a finite-difference gradient checker.
//! - [`backbone`]: a toy three-level convolutional feature extractor.
//! - [`fusion`]: soft attention, template-based cosine attention and
//!   single-level (hard) fusion of the three levels into one attention map.
//! - [`data`]: COCO annotation ingestion, small-object filtering, anchor
//!   clustering, size histograms and a synthetic small-object dataset.
//! - [`train`]: a heatmap-localization harness used to compare the fusion
//!   strategies.
//! - [`checks`]: the finite-difference suite over every op and the full
//!   forward paths.

pub mod tensor;
pub mod backbone;
pub mod checks;
mod error;
pub mod data;
pub mod fusion;
mod layers;
pub mod train;

pub use error::{Error, Result};
