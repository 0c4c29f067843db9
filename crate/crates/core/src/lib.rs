//! Unsupervised model-order selection for uniform-linear-array snapshots.
//!
//! The library trains a variational autoencoder whose decoder emits a
//! structured covariance parameterized by an oversampled DFT, screens for
//! the zero-source case against the noise floor, and classifies the decoder
//! spectrum's entropy with thresholds calibrated from a 1-D Gaussian
//! mixture. Classical AIC/MDL selection and a supervised covariance-based
//! classifier are included as baselines, and a benchmark harness produces
//! accuracy-over-SNR comparisons.
//!
//! Entry points:
//! - [`sim`]: synthetic array-snapshot datasets.
//! - [`vae`]: the autoencoder, its structured covariance, and training.
//! - [`decision`]: entropy features, GMM calibration, model-order predictor.
//! - [`ic`]: AIC/MDL baselines.
//! - [`covnet`]: supervised baseline classifier.
//! - [`bench`]: end-to-end experiment harness used by the CLI.

pub mod bench;
pub mod covnet;
pub mod decision;
pub mod error;
pub mod ic;
mod linalg;
pub mod nn;
pub mod sim;
pub mod vae;

pub use error::{Error, Result};
