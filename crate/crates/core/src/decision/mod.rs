//! Model-order decision on top of averaged decoder spectra.
//!
//! Pipeline: infer the averaged spectrum, extract a feature vector (the
//! spectrum itself or the eigenvalues of its signal covariance), screen
//! for model order zero against the noise variance, then classify the
//! feature entropy with thresholds calibrated from a one-dimensional
//! Gaussian mixture.

mod calibrate;
mod gmm;

pub use calibrate::{
    calibrate, load_calibration, model_fingerprint, save_calibration, CalibrationConfig,
    EntropyCalibration, DEFAULT_MO_ZERO_SLACK,
};
pub(crate) use calibrate::calibrate_from_entropies;
pub use gmm::{fit_gmm_1d, Gmm1d, GmmComponent};

use crate::error::{Error, Result};
use crate::linalg::hermitian_eigenvalues_desc;
use crate::sim::SnapshotBatch;
use crate::vae::{
    build_oversampled_dft, infer_spectrum, signal_covariance, DecoderSpectrum, ModelParameters,
};
use serde::{Deserialize, Serialize};

/// Which statistic of the averaged spectrum feeds the entropy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureMode {
    /// The averaged weight vector c̄ itself (length K·N).
    #[serde(rename = "spectrum")]
    Spectrum,
    /// Eigenvalues of the signal covariance F̃ᴴdiag(c̄)F̃ (length N).
    #[serde(rename = "eigen")]
    Eigen,
}

/// Nonnegative feature values plus the noise variance they are screened
/// against.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub mode: FeatureMode,
    pub noise_var: f64,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, mode: FeatureMode, noise_var: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("feature vector must be nonempty"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("feature values must be finite and >= 0"));
        }
        if !(noise_var > 0.0) || !noise_var.is_finite() {
            return Err(Error::invalid("noise_var must be positive"));
        }
        Ok(Self {
            values,
            mode,
            noise_var,
        })
    }
}

/// Shannon entropy of the sum-normalized vector, with 0·log 0 := 0.
/// Natural logarithm; range [0, ln(len)].
pub fn entropy(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("entropy of an empty vector"));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("entropy needs finite nonnegative values"));
    }
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateData(
            "entropy of an all-zero vector is undefined".into(),
        ));
    }
    let mut h = 0.0;
    for v in values {
        if *v > 0.0 {
            let p = v / total;
            h -= p * p.ln();
        }
    }
    Ok(h)
}

/// Turn an averaged spectrum into the classifier feature. Spectrum mode
/// passes c̄ through; eigen mode returns the eigenvalues of the signal
/// covariance (noise term excluded), clipped at zero, sorted descending.
pub fn extract_feature(
    spectrum: &DecoderSpectrum,
    mode: FeatureMode,
    dft: &ndarray::Array2<num_complex::Complex64>,
) -> Result<FeatureVector> {
    match mode {
        FeatureMode::Spectrum => {
            if spectrum.c.len() != dft.dim().0 {
                return Err(Error::dims(format!(
                    "spectrum has {} weights, DFT has {} rows",
                    spectrum.c.len(),
                    dft.dim().0
                )));
            }
            FeatureVector::new(spectrum.c.clone(), mode, spectrum.noise_var)
        }
        FeatureMode::Eigen => {
            let cov = signal_covariance(&spectrum.c, dft)?;
            let eig = hermitian_eigenvalues_desc(&cov)?;
            let values: Vec<f64> = eig.into_iter().map(|v| v.max(0.0)).collect();
            FeatureVector::new(values, mode, spectrum.noise_var)
        }
    }
}

/// Model-order-zero screen: true when even the largest feature value sits
/// below the noise variance (with a multiplicative slack).
pub fn mo_zero_screen(feature: &FeatureVector, slack: f64) -> bool {
    let max = feature.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max < feature.noise_var * (1.0 + slack)
}

/// Map an entropy value to a model order in 1..=n_components via the
/// calibrated thresholds (monotone non-decreasing in the entropy).
pub fn classify_entropy(calibration: &EntropyCalibration, h: f64) -> usize {
    1 + calibration.thresholds.iter().filter(|t| h > **t).count()
}

/// Full decision pipeline for one batch of snapshots.
pub fn predict_mo(
    batch: &SnapshotBatch,
    params: &ModelParameters,
    calibration: &EntropyCalibration,
) -> Result<usize> {
    let spectrum = infer_spectrum(batch, params)?;
    let dft = build_oversampled_dft(params.arch.n_antennas, params.arch.oversampling)?;
    let feature = extract_feature(&spectrum, calibration.mode, &dft)?;
    if mo_zero_screen(&feature, calibration.mo_zero_slack) {
        return Ok(0);
    }
    let h = entropy(&feature.values)?;
    Ok(classify_entropy(calibration, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{substream, SourceScene, StreamDomain};
    use crate::vae::{VaeArch, VaeVariant};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn entropy_analytic_cases() {
        let m = 6;
        let h = entropy(&vec![0.25; m]).unwrap();
        assert_abs_diff_eq!(h, (m as f64).ln(), epsilon = 1e-12);

        let h = entropy(&[0.0, 3.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(h, 0.0, epsilon = 1e-12);

        let h = entropy(&[0.5, 0.5, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(h, 2.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn entropy_rejects_bad_input() {
        assert!(entropy(&[]).is_err());
        assert!(entropy(&[0.0, 0.0]).is_err());
        assert!(entropy(&[1.0, -0.1]).is_err());
        assert!(entropy(&[1.0, f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn entropy_is_scale_invariant(
            values in proptest::collection::vec(1e-6f64..1e3, 2..20),
            scale in 1e-3f64..1e3,
        ) {
            let h = entropy(&values).unwrap();
            let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
            let hs = entropy(&scaled).unwrap();
            prop_assert!((h - hs).abs() < 1e-9);
        }

        #[test]
        fn entropy_is_permutation_invariant(
            values in proptest::collection::vec(0.0f64..10.0, 3..12),
        ) {
            prop_assume!(values.iter().sum::<f64>() > 1e-9);
            let mut rev = values.clone();
            rev.reverse();
            let h = entropy(&values).unwrap();
            let hr = entropy(&rev).unwrap();
            prop_assert!((h - hr).abs() < 1e-12);
        }

        #[test]
        fn entropy_stays_in_range(
            values in proptest::collection::vec(0.0f64..10.0, 2..16),
        ) {
            prop_assume!(values.iter().sum::<f64>() > 1e-9);
            let h = entropy(&values).unwrap();
            prop_assert!(h >= -1e-12);
            prop_assert!(h <= (values.len() as f64).ln() + 1e-12);
        }
    }

    #[test]
    fn spectrum_mode_passes_values_through() {
        let dft = build_oversampled_dft(4, 2).unwrap();
        let spec = DecoderSpectrum::new(vec![0.5; 8], 0.1).unwrap();
        let f = extract_feature(&spec, FeatureMode::Spectrum, &dft).unwrap();
        assert_eq!(f.values, spec.c);
        assert_eq!(f.noise_var, 0.1);
    }

    #[test]
    fn eigen_mode_flat_spectrum_gives_equal_eigenvalues() {
        let (n, k) = (5, 3);
        let dft = build_oversampled_dft(n, k).unwrap();
        let alpha = 0.7;
        let spec = DecoderSpectrum::new(vec![alpha; n * k], 0.2).unwrap();
        let f = extract_feature(&spec, FeatureMode::Eigen, &dft).unwrap();
        assert_eq!(f.values.len(), n);
        for v in &f.values {
            assert_abs_diff_eq!(*v, alpha, epsilon = 1e-10);
        }
    }

    #[test]
    fn eigen_mode_matches_dense_oracle_and_trace_identity() {
        let (n, k) = (8, 4);
        let dft = build_oversampled_dft(n, k).unwrap();
        let mut rng = substream(40, StreamDomain::Sample, 0, 0);
        let c: Vec<f64> = (0..n * k).map(|_| rng.gen_range(0.05..3.0)).collect();
        let spec = DecoderSpectrum::new(c.clone(), 0.3).unwrap();
        let f = extract_feature(&spec, FeatureMode::Eigen, &dft).unwrap();

        // Dense oracle: eigenvalues of the full covariance minus the noise.
        let cov = crate::vae::build_covariance(&spec, &dft).unwrap();
        let full = hermitian_eigenvalues_desc(&cov).unwrap();
        for (a, b) in f.values.iter().zip(&full) {
            assert_abs_diff_eq!(*a, b - 0.3, epsilon = 1e-10);
        }

        // Trace identity: rows have norm² 1/K, so Σ eig = (1/K)·Σ c̄.
        let sum_eig: f64 = f.values.iter().sum();
        let expected = c.iter().sum::<f64>() / k as f64;
        assert_abs_diff_eq!(sum_eig, expected, epsilon = 1e-10);

        assert!(f.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn critically_sampled_eigen_equals_spectrum_up_to_order() {
        // K=1: the covariance is circulant with eigenvalues c̄, so both
        // modes carry the same multiset.
        let n = 6;
        let dft = build_oversampled_dft(n, 1).unwrap();
        let mut rng = substream(41, StreamDomain::Sample, 0, 0);
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..3.0)).collect();
        let spec = DecoderSpectrum::new(c.clone(), 0.1).unwrap();
        let eig = extract_feature(&spec, FeatureMode::Eigen, &dft).unwrap();
        let mut sorted = c;
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (a, b) in eig.values.iter().zip(&sorted) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-10);
        }
    }

    #[test]
    fn mo_zero_screen_thresholds() {
        let low = FeatureVector::new(vec![1e-4, 5e-4], FeatureMode::Spectrum, 0.1).unwrap();
        assert!(mo_zero_screen(&low, 0.1));
        let high = FeatureVector::new(vec![1e-4, 10.0], FeatureMode::Spectrum, 0.1).unwrap();
        assert!(!mo_zero_screen(&high, 0.1));
        // Slack widens the MO-0 region: a value just above σ² still screens.
        let edge = FeatureVector::new(vec![0.105], FeatureMode::Spectrum, 0.1).unwrap();
        assert!(mo_zero_screen(&edge, 0.1));
        assert!(!mo_zero_screen(&edge, 0.01));
    }

    #[test]
    fn predict_pipeline_stays_in_range_with_untrained_model() {
        let arch = VaeArch {
            n_antennas: 6,
            oversampling: 2,
            latent_dim: 3,
            variant: VaeVariant::KnownNoise,
        };
        let params = ModelParameters::init(&arch, 50).unwrap();
        let calibration = calibrate::test_support::synthetic_calibration(FeatureMode::Spectrum);
        let mut rng = substream(51, StreamDomain::Sample, 0, 0);
        for _ in 0..10 {
            let y = ndarray::Array2::from_shape_fn((6, 3), |_| {
                num_complex::Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            });
            let batch = SnapshotBatch {
                y,
                noise_var: 0.5,
                scene: SourceScene::empty(),
                snr_db: 3.0,
            };
            let mo = predict_mo(&batch, &params, &calibration).unwrap();
            assert!(mo <= 4);
        }
    }

    #[test]
    fn classify_entropy_threshold_semantics() {
        let calibration = calibrate::test_support::synthetic_calibration(FeatureMode::Spectrum);
        let t = &calibration.thresholds;
        assert_eq!(classify_entropy(&calibration, t[0] - 0.1), 1);
        assert_eq!(classify_entropy(&calibration, (t[0] + t[1]) / 2.0), 2);
        assert_eq!(classify_entropy(&calibration, (t[1] + t[2]) / 2.0), 3);
        assert_eq!(classify_entropy(&calibration, t[2] + 0.1), 4);
        // Monotone in h.
        let mut prev = 0;
        for i in 0..100 {
            let h = i as f64 * 0.05;
            let mo = classify_entropy(&calibration, h);
            assert!(mo >= prev);
            prev = mo;
        }
    }
}
