//! Unsupervised time-series anomaly detection by reconstructing anomalies to
//! normal.
//!
//! Normal training subsequences are corrupted into imitated anomalies, a
//! latent-constrained convolutional autoencoder is trained adversarially
//! against a discriminator so every reconstruction looks normal, and test
//! subsequences are scored by their normalized reconstruction error.

pub mod checkpoint;
pub mod cli;
pub mod datasets;
pub mod error;
pub mod imitation;
pub mod model;
pub mod rng;
pub mod scoring;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
