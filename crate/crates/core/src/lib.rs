//! Desk-scale Siamese masked-autoencoder weather emulator.
//!
//! The crate covers the full pipeline on synthetic data: a small autodiff
//! tensor engine, lat-lon metrics, a synthetic advection-diffusion dataset,
//! the two-frame encoder / cross-self decoder network, asymmetric masking,
//! the three training stages, lead-time-composition ensembles, and a
//! numerical lab for denoising pre-training as spectral regularization of
//! ridge regression.

pub mod cli;
pub mod error;
pub mod format;
pub mod forecast;
pub mod grid;
pub mod masking;
pub mod model;
pub mod training;
pub mod synthdata;
pub mod tensor;
pub mod theory;

pub use error::{Error, Result};
