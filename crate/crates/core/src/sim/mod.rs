//! Synthetic ULA snapshot generation.
//!
//! The received signal model is `y(t) = A(θ) s(t) + n(t)` on a uniform
//! linear array with half-wavelength spacing, uncorrelated sources with
//! powers normalized to unit total, and circularly-symmetric complex
//! Gaussian noise with variance `σ_n² = 10^(-SNR_dB/10)`.
//!
//! Datasets store the *noiseless* matrices `A(θ)s(t)` together with the
//! per-sample scene and SNR; noise is re-drawn from a deterministic
//! substream whenever a noisy realization is needed. This is what lets
//! training present fresh noisy observations every epoch without
//! regenerating the source signals.

mod container;

pub use container::{read_dataset, write_dataset, DATASET_MAGIC};

use crate::error::{Error, Result};
use ndarray::Array2;
use num_complex::{Complex, Complex64};
use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Geometry of the receiving array.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayConfig {
    /// Number of antennas N.
    pub n_antennas: usize,
    /// DFT oversampling factor K used by the decoder parameterization.
    pub oversampling: usize,
}

impl ArrayConfig {
    pub fn new(n_antennas: usize, oversampling: usize) -> Result<Self> {
        if n_antennas < 2 {
            return Err(Error::invalid(format!(
                "n_antennas must be >= 2, got {n_antennas}"
            )));
        }
        if oversampling < 1 {
            return Err(Error::invalid("oversampling must be >= 1"));
        }
        Ok(Self {
            n_antennas,
            oversampling,
        })
    }

    /// Size K·N of the oversampled spectral grid.
    pub fn grid_size(&self) -> usize {
        self.n_antennas * self.oversampling
    }
}

/// A draw of source directions and powers; the model order is the number
/// of sources.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceScene {
    /// Directions of arrival in radians, each in (−π/2, π/2).
    pub doas: Vec<f64>,
    /// Positive per-source powers summing to one (diagonal of C_s).
    pub source_powers: Vec<f64>,
}

impl SourceScene {
    pub fn new(doas: Vec<f64>, source_powers: Vec<f64>) -> Result<Self> {
        if doas.len() != source_powers.len() {
            return Err(Error::dims(format!(
                "{} DoAs vs {} powers",
                doas.len(),
                source_powers.len()
            )));
        }
        if doas.iter().any(|t| !t.is_finite() || t.abs() >= PI / 2.0) {
            return Err(Error::invalid("DoAs must be finite and in (-pi/2, pi/2)"));
        }
        if source_powers.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::invalid("source powers must be positive"));
        }
        if !doas.is_empty() {
            let total: f64 = source_powers.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "source powers must sum to 1, got {total}"
                )));
            }
        }
        Ok(Self {
            doas,
            source_powers,
        })
    }

    pub fn empty() -> Self {
        Self {
            doas: Vec::new(),
            source_powers: Vec::new(),
        }
    }

    /// Number of sources L.
    pub fn model_order(&self) -> usize {
        self.doas.len()
    }
}

/// A noisy batch of received snapshots.
#[derive(Clone, Debug)]
pub struct SnapshotBatch {
    /// Received signal, N×T; column t is the snapshot y(t).
    pub y: Array2<Complex64>,
    /// Noise variance σ_n², tied to `snr_db` by σ_n² = 10^(−snr_db/10).
    pub noise_var: f64,
    pub scene: SourceScene,
    pub snr_db: f64,
}

/// A stored sample: the noiseless signal plus everything needed to realize
/// noisy snapshots at any SNR.
#[derive(Clone, Debug)]
pub struct CleanSample {
    /// Noiseless A(θ)s(t), N×T. Stored at 32-bit precision, matching the
    /// on-disk payload dtype, so file round trips are exact.
    pub clean: Array2<Complex<f32>>,
    pub scene: SourceScene,
    /// SNR assigned at generation time (training draws it per sample).
    pub snr_db: f64,
}

impl CleanSample {
    pub fn noise_var(&self) -> f64 {
        snr_to_noise_var(self.snr_db).expect("stored snr_db is finite")
    }

    /// Noisy realization at the stored per-sample SNR.
    pub fn realize<R: Rng + ?Sized>(&self, rng: &mut R) -> SnapshotBatch {
        self.realize_at(self.snr_db, rng)
    }

    /// Noisy realization at an arbitrary SNR (the clean signal has unit
    /// expected power by construction, so only the noise changes).
    pub fn realize_at<R: Rng + ?Sized>(&self, snr_db: f64, rng: &mut R) -> SnapshotBatch {
        let noise_var = snr_to_noise_var(snr_db).expect("snr_db is finite");
        let (n, t) = self.clean.dim();
        let mut y = Array2::<Complex64>::zeros((n, t));
        // Column-major draw order: one snapshot at a time, matching generate_snapshots.
        for col in 0..t {
            for row in 0..n {
                let c = self.clean[(row, col)];
                y[(row, col)] =
                    Complex64::new(c.re as f64, c.im as f64) + complex_gaussian(noise_var, rng);
            }
        }
        SnapshotBatch {
            y,
            noise_var,
            scene: self.scene.clone(),
            snr_db,
        }
    }
}

/// Scenario-level generation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_antennas: usize,
    pub oversampling: usize,
    /// Largest model order L_max; labels run 0..=L_max.
    pub max_order: usize,
    /// Per-sample SNR is drawn uniformly in dB over this closed range.
    pub snr_range_db: (f64, f64),
    /// Snapshots per sample T.
    pub t_snapshots: usize,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        ArrayConfig::new(self.n_antennas, self.oversampling)?;
        if self.t_snapshots < 1 {
            return Err(Error::invalid("t_snapshots must be >= 1"));
        }
        if self.max_order > u8::MAX as usize {
            return Err(Error::invalid("max_order must fit in u8 labels"));
        }
        if !(self.snr_range_db.0.is_finite() && self.snr_range_db.1.is_finite()) {
            return Err(Error::invalid("snr_range_db must be finite"));
        }
        if self.snr_range_db.0 > self.snr_range_db.1 {
            return Err(Error::invalid("snr_range_db must be ascending"));
        }
        Ok(())
    }

    pub fn array(&self) -> ArrayConfig {
        ArrayConfig {
            n_antennas: self.n_antennas,
            oversampling: self.oversampling,
        }
    }
}

/// A generated dataset: noiseless samples plus labels. Labels are used only
/// for evaluation and threshold calibration, never for VAE training.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<CleanSample>,
    pub labels: Vec<u8>,
    pub config: ScenarioConfig,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Substream domains for deterministic, independently seeded RNG streams.
/// Every random draw in the crate flows through one of these, so that any
/// artifact is reproducible from (seed, domain, indices) alone.
#[derive(Clone, Copy, Debug)]
pub enum StreamDomain {
    /// Scene + signal draws for dataset sample `b`.
    Sample,
    /// Noise for training epoch `a`, flattened snapshot `b`.
    EpochNoise,
    /// Noise for evaluation at grid index `a`, sample `b`.
    EvalNoise,
    /// Parameter initialization for model instance `a`.
    Init,
    /// Training-loop draws (shuffles, latent ε) for epoch `a`.
    TrainLoop,
    /// Fixed noise for the held-out monitor split, snapshot `b`.
    MonitorNoise,
}

impl StreamDomain {
    fn tag(self) -> u64 {
        match self {
            StreamDomain::Sample => 0,
            StreamDomain::EpochNoise => 1,
            StreamDomain::EvalNoise => 2,
            StreamDomain::Init => 3,
            StreamDomain::TrainLoop => 4,
            StreamDomain::MonitorNoise => 5,
        }
    }
}

/// Deterministic substream keyed by (seed, domain, a, b). Streams with
/// distinct keys are statistically independent ChaCha streams.
pub fn substream(seed: u64, domain: StreamDomain, a: u64, b: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    debug_assert!(a < (1 << 24), "substream index a out of range");
    rng.set_stream((domain.tag() << 56) | (a << 32) | (b & 0xffff_ffff));
    rng
}

/// One draw of a circularly-symmetric complex Gaussian with variance `var`
/// (real and imaginary parts i.i.d. N(0, var/2)).
pub fn complex_gaussian<R: Rng + ?Sized>(var: f64, rng: &mut R) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Steering vector of a half-wavelength ULA at angle `theta`: entry m is
/// exp(−jπ·m·sin θ).
pub fn steering_vector(theta: f64, n_antennas: usize) -> Result<Vec<Complex64>> {
    if n_antennas < 1 {
        return Err(Error::invalid("n_antennas must be >= 1"));
    }
    if !theta.is_finite() {
        return Err(Error::invalid("theta must be finite"));
    }
    if theta.abs() >= PI / 2.0 {
        return Err(Error::invalid("theta must lie in (-pi/2, pi/2)"));
    }
    let phase = -PI * theta.sin();
    Ok((0..n_antennas)
        .map(|m| Complex64::from_polar(1.0, phase * m as f64))
        .collect())
}

/// Noise variance for a given SNR in dB under the SNR = 1/σ_n² convention.
pub fn snr_to_noise_var(snr_db: f64) -> Result<f64> {
    if !snr_db.is_finite() {
        return Err(Error::invalid("snr_db must be finite"));
    }
    Ok(10f64.powf(-snr_db / 10.0))
}

/// Draw a random scene with `model_order` sources: DoAs i.i.d. uniform on
/// (−π/2, π/2), powers i.i.d. uniform(0,1) normalized to unit sum.
pub fn draw_scene<R: Rng + ?Sized>(model_order: usize, rng: &mut R) -> SourceScene {
    if model_order == 0 {
        return SourceScene::empty();
    }
    let angle = Uniform::new(-PI / 2.0, PI / 2.0);
    let doas: Vec<f64> = (0..model_order).map(|_| angle.sample(rng)).collect();
    let mut powers: Vec<f64> = (0..model_order).map(|_| rng.gen::<f64>()).collect();
    let total: f64 = powers.iter().sum();
    for p in &mut powers {
        *p /= total;
    }
    SourceScene {
        doas,
        source_powers: powers,
    }
}

/// Noiseless received signal A(θ)s(t) with s(t) ~ CN(0, diag(powers)),
/// independent across snapshots. Used by both `generate_snapshots` and the
/// dataset builder.
fn draw_clean<R: Rng + ?Sized>(
    scene: &SourceScene,
    n_antennas: usize,
    t_snapshots: usize,
    rng: &mut R,
) -> Result<Array2<Complex64>> {
    let steering: Vec<Vec<Complex64>> = scene
        .doas
        .iter()
        .map(|&th| steering_vector(th, n_antennas))
        .collect::<Result<_>>()?;
    let mut clean = Array2::<Complex64>::zeros((n_antennas, t_snapshots));
    for t in 0..t_snapshots {
        for (a, &p) in steering.iter().zip(scene.source_powers.iter()) {
            let s = complex_gaussian(p, rng);
            for m in 0..n_antennas {
                clean[(m, t)] += a[m] * s;
            }
        }
    }
    Ok(clean)
}

/// Generate a noisy snapshot batch for a fixed scene.
pub fn generate_snapshots<R: Rng + ?Sized>(
    scene: &SourceScene,
    config: &ArrayConfig,
    t_snapshots: usize,
    snr_db: f64,
    rng: &mut R,
) -> Result<SnapshotBatch> {
    ArrayConfig::new(config.n_antennas, config.oversampling)?;
    if t_snapshots < 1 {
        return Err(Error::invalid("t_snapshots must be >= 1"));
    }
    let noise_var = snr_to_noise_var(snr_db)?;
    let mut y = draw_clean(scene, config.n_antennas, t_snapshots, rng)?;
    for v in y.iter_mut() {
        *v += complex_gaussian(noise_var, rng);
    }
    Ok(SnapshotBatch {
        y,
        noise_var,
        scene: scene.clone(),
        snr_db,
    })
}

/// Build a dataset with `per_mo_count` samples for each model order in
/// 0..=max_order. Sample i uses the substream (seed, Sample, 0, i): scene,
/// then SNR, then signal draws, so regeneration is bit-exact and samples
/// may be generated in parallel.
pub fn build_dataset(config: &ScenarioConfig, per_mo_count: usize, seed: u64) -> Result<Dataset> {
    config.validate()?;
    if per_mo_count < 1 {
        return Err(Error::invalid("per_mo_count must be >= 1"));
    }
    let n_samples = per_mo_count * (config.max_order + 1);
    let (lo, hi) = config.snr_range_db;
    let samples: Vec<(CleanSample, u8)> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let label = (i / per_mo_count) as u8;
            let mut rng = substream(seed, StreamDomain::Sample, 0, i as u64);
            let scene = draw_scene(label as usize, &mut rng);
            let snr_db = if lo == hi {
                lo
            } else {
                rng.gen_range(lo..hi)
            };
            let clean64 = draw_clean(&scene, config.n_antennas, config.t_snapshots, &mut rng)
                .expect("validated config");
            let clean = clean64.mapv(|v| Complex::new(v.re as f32, v.im as f32));
            (
                CleanSample {
                    clean,
                    scene,
                    snr_db,
                },
                label,
            )
        })
        .collect();
    let labels = samples.iter().map(|(_, l)| *l).collect();
    let samples = samples.into_iter().map(|(s, _)| s).collect();
    Ok(Dataset {
        samples,
        labels,
        config: config.clone(),
        seed,
    })
}
