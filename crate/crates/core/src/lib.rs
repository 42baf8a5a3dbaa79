//! Scattering-transform image features and affine-model classification.
//!
//! The pipeline: build a Gabor [`filterbank`], compute translation-invariant
//! [`scattering`] coefficients with FFT convolutions from [`engine`], fit one
//! affine PCA model per class in [`models`], and classify with the penalized
//! model selection rule in [`classifier`]. [`datasets`] reads IDX digit files
//! and texture directories; [`container`] stores banks, features and models.

pub mod classifier;
pub mod container;
pub mod datasets;
pub mod engine;
pub mod error;
pub mod filterbank;
pub mod models;
pub mod scattering;

pub use error::{Error, Result};
