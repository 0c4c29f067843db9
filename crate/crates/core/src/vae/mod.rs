//! The variational autoencoder with a structured decoder covariance.
//!
//! The encoder maps one complex snapshot (real/imaginary parts stacked as
//! two channels) to a diagonal Gaussian over a latent vector; the decoder
//! maps a latent draw to a positive spectral weight vector c of length
//! K·N, which defines the conditional covariance F̃ᴴdiag(c)F̃ + σ²I. Two
//! variants exist: known noise (σ² supplied per sample) and learned noise
//! (σ² is an extra decoder output).

mod checkpoint;
mod dft;
mod elbo;
mod model;
mod train;

pub use checkpoint::{load_model, save_model};
pub use dft::{build_covariance, build_oversampled_dft};
pub use elbo::{elbo_given_covariance, elbo_objective, ElboHead, RecGrad};
pub use model::{decode, encode, infer_spectrum, ModelParameters, TrainMeta};
pub use train::{train, TrainConfig, TrainOutcome, TrainReport};

pub(crate) use dft::signal_covariance;
pub(crate) use elbo::latent_term;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Diagonal Gaussian posterior over the latent vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPosterior {
    pub mean: Vec<f64>,
    /// Strictly positive per-dimension variances.
    pub variance: Vec<f64>,
}

impl LatentPosterior {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.is_empty() || mean.len() != variance.len() {
            return Err(Error::dims(format!(
                "mean length {} vs variance length {}",
                mean.len(),
                variance.len()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("posterior mean must be finite"));
        }
        if variance.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("posterior variance must be positive"));
        }
        Ok(Self { mean, variance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Positive spectral weights plus the noise variance used to assemble the
/// decoder covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderSpectrum {
    /// Weight vector of length K·N, all entries strictly positive.
    pub c: Vec<f64>,
    pub noise_var: f64,
}

impl DecoderSpectrum {
    pub fn new(c: Vec<f64>, noise_var: f64) -> Result<Self> {
        if c.is_empty() {
            return Err(Error::invalid("spectrum must be nonempty"));
        }
        if c.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("spectrum entries must be positive"));
        }
        if !(noise_var > 0.0) || !noise_var.is_finite() {
            return Err(Error::invalid("noise_var must be positive"));
        }
        Ok(Self { c, noise_var })
    }
}

/// Noise handling of a trained model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VaeVariant {
    /// σ² is supplied externally (the simulator's true noise variance).
    #[serde(rename = "known-noise")]
    KnownNoise,
    /// σ² is an additional positivity-mapped decoder output per snapshot.
    #[serde(rename = "learned-noise")]
    LearnedNoise,
}

/// Architecture hyperparameters; everything else (channel progression,
/// kernel size) is fixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeArch {
    pub n_antennas: usize,
    pub oversampling: usize,
    pub latent_dim: usize,
    pub variant: VaeVariant,
}

impl VaeArch {
    pub fn validate(&self) -> Result<()> {
        if self.n_antennas < 2 {
            return Err(Error::invalid("n_antennas must be >= 2"));
        }
        if self.oversampling < 1 {
            return Err(Error::invalid("oversampling must be >= 1"));
        }
        if self.latent_dim < 1 {
            return Err(Error::invalid("latent_dim must be >= 1"));
        }
        Ok(())
    }

    pub fn grid_size(&self) -> usize {
        self.n_antennas * self.oversampling
    }

    /// Decoder head width: K·N spectral weights, plus one noise logit for
    /// the learned-noise variant.
    pub(crate) fn head_dim(&self) -> usize {
        self.grid_size()
            + match self.variant {
                VaeVariant::KnownNoise => 0,
                VaeVariant::LearnedNoise => 1,
            }
    }
}

/// Positivity map for raw decoder outputs: exponential clamped to
/// [1e-8, 1e8] to keep the covariance positive definite and finite.
pub(crate) fn positivity(raw: f64) -> f64 {
    raw.exp().clamp(1e-8, 1e8)
}

/// Derivative of `positivity` w.r.t. the raw value (zero where clamped).
pub(crate) fn positivity_grad(mapped: f64) -> f64 {
    if mapped > 1e-8 && mapped < 1e8 {
        mapped
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn posterior_validation() {
        assert!(LatentPosterior::new(vec![0.0; 3], vec![1.0; 3]).is_ok());
        assert!(LatentPosterior::new(vec![0.0; 3], vec![1.0; 2]).is_err());
        assert!(LatentPosterior::new(vec![f64::NAN], vec![1.0]).is_err());
        assert!(LatentPosterior::new(vec![0.0], vec![0.0]).is_err());
        assert!(LatentPosterior::new(vec![], vec![]).is_err());
    }

    #[test]
    fn spectrum_validation() {
        assert!(DecoderSpectrum::new(vec![1.0, 2.0], 0.1).is_ok());
        assert!(DecoderSpectrum::new(vec![1.0, 0.0], 0.1).is_err());
        assert!(DecoderSpectrum::new(vec![1.0], -0.1).is_err());
        assert!(DecoderSpectrum::new(vec![], 0.1).is_err());
    }

    #[test]
    fn positivity_map_bounds_and_gradient() {
        assert!(positivity(-1e9) >= 1e-8);
        assert!(positivity(1e9) <= 1e8);
        assert_eq!(positivity(0.0), 1.0);
        assert_eq!(positivity_grad(positivity(0.5)), positivity(0.5));
        assert_eq!(positivity_grad(positivity(-1e9)), 0.0);
        assert_eq!(positivity_grad(positivity(1e9)), 0.0);
    }
}
