//! Threshold calibration from a labeled dataset.
//!
//! Entropies of all non-zero-order calibration samples are fitted with a
//! Gaussian mixture (one component per model order); thresholds sit at the
//! equal-posterior boundaries between adjacent components. Labels are used
//! only to verify that ascending entropy means correspond to ascending
//! model orders; the model itself stays unsupervised.

use crate::decision::{entropy, extract_feature, fit_gmm_1d, FeatureMode, Gmm1d};
use crate::error::{Error, Result};
use crate::sim::{substream, Dataset, StreamDomain};
use crate::vae::{build_oversampled_dft, infer_spectrum, ModelParameters};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const DEFAULT_MO_ZERO_SLACK: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub mode: FeatureMode,
    /// Multiplicative slack δ of the MO-zero screen.
    pub mo_zero_slack: f64,
    /// Calibrate at this SNR (noise re-realized there) instead of each
    /// sample's stored SNR.
    pub snr_db: Option<f64>,
}

impl CalibrationConfig {
    pub fn new(mode: FeatureMode) -> Self {
        Self {
            mode,
            mo_zero_slack: DEFAULT_MO_ZERO_SLACK,
            snr_db: None,
        }
    }
}

/// A calibrated entropy classifier for model orders 1..=n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyCalibration {
    pub gmm: Gmm1d,
    /// Strictly ascending; one boundary between each adjacent component.
    pub thresholds: Vec<f64>,
    /// Model order of each component (ascending means); validated to be
    /// the identity 1..=n during calibration.
    pub component_to_mo: Vec<usize>,
    pub mode: FeatureMode,
    pub mo_zero_slack: f64,
    /// Fingerprint of the model this calibration belongs to.
    pub model_hash: String,
    /// SNR slice the thresholds were calibrated on, if per-SNR.
    pub snr_db: Option<f64>,
}

impl EntropyCalibration {
    pub fn validate(&self) -> Result<()> {
        let n = self.gmm.components.len();
        if n < 1 {
            return Err(Error::Calibration("mixture has no components".into()));
        }
        let wsum: f64 = self.gmm.components.iter().map(|c| c.weight).sum();
        if self.gmm.components.iter().any(|c| !(c.weight > 0.0)) || (wsum - 1.0).abs() > 1e-6 {
            return Err(Error::Calibration(
                "component weights must be positive and sum to 1".into(),
            ));
        }
        if self.gmm.components.iter().any(|c| c.variance < 1e-6 - 1e-12) {
            return Err(Error::Calibration(
                "component variance below the 1e-6 floor".into(),
            ));
        }
        if self
            .gmm
            .components
            .windows(2)
            .any(|w| !(w[0].mean < w[1].mean))
        {
            return Err(Error::Calibration(
                "component means must be strictly ascending".into(),
            ));
        }
        if self.thresholds.len() + 1 != n {
            return Err(Error::Calibration(format!(
                "{} thresholds for {} components",
                self.thresholds.len(),
                n
            )));
        }
        if self.thresholds.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Calibration(
                "thresholds must be strictly ascending".into(),
            ));
        }
        if !self.thresholds.is_empty() {
            let lo = self.gmm.components[0].mean;
            let hi = self.gmm.components[n - 1].mean;
            if self.thresholds[0] <= lo || self.thresholds[n - 2] >= hi {
                return Err(Error::Calibration(
                    "thresholds must lie strictly between the outermost means".into(),
                ));
            }
        }
        if self.component_to_mo != (1..=n).collect::<Vec<_>>() {
            return Err(Error::Calibration(
                "component-to-order map must be the identity on sorted means".into(),
            ));
        }
        if !(self.mo_zero_slack >= 0.0) || !self.mo_zero_slack.is_finite() {
            return Err(Error::Calibration("slack must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Equal-posterior boundary between sorted components k and k+1: the x in
/// (μ_k, μ_{k+1}) where w_k·N(x;k) = w_{k+1}·N(x;k+1), found by bisection.
/// Falls back to the midpoint when the log-odds do not change sign.
fn boundary(gmm: &Gmm1d, k: usize) -> f64 {
    let lo_mean = gmm.components[k].mean;
    let hi_mean = gmm.components[k + 1].mean;
    let f = |x: f64| {
        let a = &gmm.components[k];
        let b = &gmm.components[k + 1];
        let la = a.weight.ln()
            - 0.5 * (std::f64::consts::TAU * a.variance).ln()
            - (x - a.mean) * (x - a.mean) / (2.0 * a.variance);
        let lb = b.weight.ln()
            - 0.5 * (std::f64::consts::TAU * b.variance).ln()
            - (x - b.mean) * (x - b.mean) / (2.0 * b.variance);
        la - lb
    };
    let (mut lo, mut hi) = (lo_mean, hi_mean);
    if !(f(lo) > 0.0 && f(hi) < 0.0) {
        return 0.5 * (lo_mean + hi_mean);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * (hi_mean - lo_mean).abs() {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Core calibration from precomputed (entropy, label) pairs.
pub(crate) fn calibrate_from_entropies(
    entropies: &[f64],
    labels: &[usize],
    n_components: usize,
    mode: FeatureMode,
    mo_zero_slack: f64,
    model_hash: String,
    snr_db: Option<f64>,
) -> Result<EntropyCalibration> {
    if entropies.len() != labels.len() {
        return Err(Error::dims(format!(
            "{} entropies vs {} labels",
            entropies.len(),
            labels.len()
        )));
    }
    for mo in 1..=n_components {
        if !labels.contains(&mo) {
            return Err(Error::Calibration(format!(
                "calibration set has no samples of model order {mo}"
            )));
        }
    }
    let gmm = fit_gmm_1d(entropies, n_components)?;
    if gmm.components.windows(2).any(|w| !(w[0].mean < w[1].mean)) {
        return Err(Error::Calibration(
            "fitted component means are not strictly ascending".into(),
        ));
    }

    // Majority vote per component over the labeled entropies; ascending
    // means must correspond to ascending model orders.
    let mut counts = vec![vec![0usize; n_components]; n_components];
    for (&h, &label) in entropies.iter().zip(labels) {
        counts[gmm.map_component(h)][label - 1] += 1;
    }
    for (k, row) in counts.iter().enumerate() {
        let total: usize = row.iter().sum();
        if total == 0 {
            return Err(Error::Calibration(format!(
                "component {k} attracted no calibration samples"
            )));
        }
        let majority = row
            .iter()
            .enumerate()
            .max_by_key(|(_, c)| **c)
            .map(|(mo0, _)| mo0 + 1)
            .expect("nonempty row");
        if majority != k + 1 {
            return Err(Error::Calibration(format!(
                "component {k} (sorted by mean) is dominated by model order {majority}, \
                 expected {}; entropy ordering does not match label ordering",
                k + 1
            )));
        }
    }

    let thresholds: Vec<f64> = (0..n_components - 1).map(|k| boundary(&gmm, k)).collect();
    let calibration = EntropyCalibration {
        gmm,
        thresholds,
        component_to_mo: (1..=n_components).collect(),
        mode,
        mo_zero_slack,
        model_hash,
        snr_db,
    };
    calibration.validate()?;
    Ok(calibration)
}

/// Calibrates entropy thresholds for a trained model on a labeled dataset.
/// Deterministic in (model, dataset, config); the dataset seed drives the
/// noise realizations.
pub fn calibrate(
    params: &ModelParameters,
    dataset: &Dataset,
    config: &CalibrationConfig,
) -> Result<EntropyCalibration> {
    if params.arch.n_antennas != dataset.config.n_antennas
        || params.arch.oversampling != dataset.config.oversampling
    {
        return Err(Error::dims(format!(
            "model is N={} K={}, dataset is N={} K={}",
            params.arch.n_antennas,
            params.arch.oversampling,
            dataset.config.n_antennas,
            dataset.config.oversampling
        )));
    }
    let n_components = dataset.config.max_order;
    if n_components < 1 {
        return Err(Error::Calibration(
            "calibration needs max_order >= 1".into(),
        ));
    }
    let dft = build_oversampled_dft(params.arch.n_antennas, params.arch.oversampling)?;
    let mut entropies = Vec::new();
    let mut labels = Vec::new();
    for (i, (sample, &label)) in dataset.samples.iter().zip(&dataset.labels).enumerate() {
        if label == 0 {
            continue;
        }
        let mut rng = substream(dataset.seed, StreamDomain::EvalNoise, 0, i as u64);
        let batch = match config.snr_db {
            Some(snr) => sample.realize_at(snr, &mut rng),
            None => sample.realize(&mut rng),
        };
        let spectrum = infer_spectrum(&batch, params)?;
        let feature = extract_feature(&spectrum, config.mode, &dft)?;
        entropies.push(entropy(&feature.values)?);
        labels.push(label as usize);
    }
    calibrate_from_entropies(
        &entropies,
        &labels,
        n_components,
        config.mode,
        config.mo_zero_slack,
        model_fingerprint(params),
        config.snr_db,
    )
}

/// SHA-256 over the architecture and every tensor (name, shape, f32
/// payload); stable across save/load round trips.
pub fn model_fingerprint(params: &ModelParameters) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(&params.arch).expect("arch serializes"));
    for (name, shape, data) in params.store.export_tensors() {
        hasher.update(name.as_bytes());
        for d in &shape {
            hasher.update((*d as u64).to_le_bytes());
        }
        for v in &data {
            hasher.update(v.to_le_bytes());
        }
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct CalibrationFile {
    format: String,
    version: u32,
    calibration: EntropyCalibration,
}

pub fn save_calibration(calibration: &EntropyCalibration, path: &Path) -> Result<()> {
    calibration.validate()?;
    let file = CalibrationFile {
        format: "moselect-calibration".into(),
        version: 1,
        calibration: calibration.clone(),
    };
    let text = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_calibration(path: &Path) -> Result<EntropyCalibration> {
    let text = std::fs::read_to_string(path)?;
    let file: CalibrationFile = serde_json::from_str(&text)?;
    if file.format != "moselect-calibration" || file.version != 1 {
        return Err(Error::Format(format!(
            "unsupported calibration container {} v{}",
            file.format, file.version
        )));
    }
    file.calibration.validate()?;
    Ok(file.calibration)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{substream, StreamDomain};
    use crate::vae::{VaeArch, VaeVariant};
    use rand_distr::{Distribution, Normal};

    /// Entropies from four separated Gaussians, labels matching ascending
    /// means.
    fn synthetic_entropies(per_class: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
        let mut rng = substream(seed, StreamDomain::Sample, 0, 0);
        let mut entropies = Vec::new();
        let mut labels = Vec::new();
        for mo in 1..=4usize {
            let dist = Normal::new(mo as f64, 0.12).unwrap();
            for _ in 0..per_class {
                entropies.push(dist.sample(&mut rng));
                labels.push(mo);
            }
        }
        (entropies, labels)
    }

    #[test]
    fn separated_classes_calibrate_cleanly() {
        let (entropies, labels) = synthetic_entropies(120, 70);
        let cal = calibrate_from_entropies(
            &entropies,
            &labels,
            4,
            FeatureMode::Spectrum,
            0.1,
            "h".into(),
            None,
        )
        .unwrap();
        cal.validate().unwrap();
        for (k, t) in cal.thresholds.iter().enumerate() {
            assert!(*t > cal.gmm.components[k].mean);
            assert!(*t < cal.gmm.components[k + 1].mean);
        }

        // Threshold classification agrees with the max-posterior component
        // on fresh draws from the same mixture.
        let (fresh, fresh_labels) = synthetic_entropies(250, 71);
        let mut agree = 0;
        for &h in &fresh {
            let by_threshold = 1 + cal.thresholds.iter().filter(|t| h > **t).count();
            let by_posterior = cal.gmm.map_component(h) + 1;
            if by_threshold == by_posterior {
                agree += 1;
            }
        }
        assert!(
            agree as f64 >= 0.99 * fresh.len() as f64,
            "agreement {agree}/{}",
            fresh.len()
        );
        let _ = fresh_labels;
    }

    #[test]
    fn inverted_label_order_is_rejected() {
        let (entropies, labels) = synthetic_entropies(60, 72);
        let flipped: Vec<usize> = labels.iter().map(|l| 5 - l).collect();
        let err = calibrate_from_entropies(
            &entropies,
            &flipped,
            4,
            FeatureMode::Spectrum,
            0.1,
            "h".into(),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Calibration(_)));
    }

    #[test]
    fn missing_model_order_is_rejected() {
        let (mut entropies, mut labels) = synthetic_entropies(60, 73);
        let keep: Vec<usize> = (0..labels.len()).filter(|i| labels[*i] != 3).collect();
        entropies = keep.iter().map(|&i| entropies[i]).collect();
        labels = keep.iter().map(|&i| labels[i]).collect();
        let err = calibrate_from_entropies(
            &entropies,
            &labels,
            4,
            FeatureMode::Spectrum,
            0.1,
            "h".into(),
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("model order 3"));
    }

    #[test]
    fn calibration_file_round_trip_is_exact() {
        let (entropies, labels) = synthetic_entropies(100, 74);
        let cal = calibrate_from_entropies(
            &entropies,
            &labels,
            4,
            FeatureMode::Eigen,
            0.1,
            "abc123".into(),
            Some(10.0),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cal.json");
        save_calibration(&cal, &path).unwrap();
        let back = load_calibration(&path).unwrap();
        assert_eq!(back, cal);

        std::fs::write(&path, "{\"format\": \"other\"}").unwrap();
        assert!(load_calibration(&path).is_err());
    }

    #[test]
    fn validation_rejects_malformed_calibrations() {
        let mut cal = test_support::synthetic_calibration(FeatureMode::Spectrum);
        cal.thresholds = vec![2.0, 1.0, 3.0];
        assert!(cal.validate().is_err());

        let mut cal = test_support::synthetic_calibration(FeatureMode::Spectrum);
        cal.component_to_mo = vec![4, 3, 2, 1];
        assert!(cal.validate().is_err());

        let mut cal = test_support::synthetic_calibration(FeatureMode::Spectrum);
        cal.gmm.components[1].mean = cal.gmm.components[0].mean;
        assert!(cal.validate().is_err());

        let mut cal = test_support::synthetic_calibration(FeatureMode::Spectrum);
        cal.thresholds[0] = -5.0;
        assert!(cal.validate().is_err());
    }

    #[test]
    fn fingerprint_tracks_weights_and_survives_round_trips() {
        let arch = VaeArch {
            n_antennas: 4,
            oversampling: 1,
            latent_dim: 2,
            variant: VaeVariant::KnownNoise,
        };
        let a = crate::vae::ModelParameters::init(&arch, 1).unwrap();
        let b = crate::vae::ModelParameters::init(&arch, 2).unwrap();
        assert_ne!(model_fingerprint(&a), model_fingerprint(&b));
        assert_eq!(model_fingerprint(&a), model_fingerprint(&a.clone()));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        crate::vae::save_model(&a, &path).unwrap();
        let loaded = crate::vae::load_model(&path).unwrap();
        assert_eq!(model_fingerprint(&a), model_fingerprint(&loaded));
    }
}
