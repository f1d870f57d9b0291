//! Kernel-space implicit neural representations for small CNNs.
//!
//! A convolutional network's kernels are stored as a [`weight_store::WeightBundle`];
//! an MLP (`inr_core::InrModel`) is trained to map integer kernel coordinates to
//! the kernel entries, after the kernel slots have been reordered by one of the
//! smoothing strategies in [`smoothing`] and the coordinates expanded by one of
//! the Fourier encoders in [`encoders`]. The [`ntk_lab`] module measures why
//! this helps: it computes empirical neural tangent kernels, their spectra, and
//! the frequency content of the fitted targets.

mod bytesio;

pub mod cnn_infer;
pub mod checkpoint;
pub mod encoders;
pub mod error;
pub mod fixture;
pub mod inr_core;
pub mod ntk_lab;
pub mod smoothing;
pub mod trainer;
pub mod weight_store;

pub use error::{Result, SbsError};
