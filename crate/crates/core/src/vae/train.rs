//! Unsupervised training loop.
//!
//! Every snapshot is treated as an independent datum: the N×T samples are
//! flattened into single snapshots before batching. Labels are never read.
//! Fresh noise is drawn for the training split at the start of every epoch;
//! the monitor split keeps one fixed noise realization so its ELBO is
//! comparable across epochs. The checkpoint with the highest monitor ELBO
//! is the one returned.

use crate::error::{Error, Result};
use crate::nn::{Adam, ParamStore};
use crate::sim::{substream, Dataset, StreamDomain};
use crate::vae::model::{ModelParameters, TrainMeta, VaeModel};
use crate::vae::{latent_term, positivity, positivity_grad, ElboHead, VaeArch, VaeVariant};
use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Hyperparameters of one training run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub latent_dim: usize,
    pub variant: VaeVariant,
    /// Admissible SNR regime; the dataset's generation range must lie
    /// inside it. Per-sample SNR is fixed at generation time.
    pub snr_range_db: (f64, f64),
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(variant: VaeVariant, latent_dim: usize, epochs: usize, seed: u64) -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 128,
            epochs,
            latent_dim,
            variant,
            snr_range_db: (-16.0, 26.0),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.latent_dim < 1 {
            return Err(Error::invalid("latent_dim must be >= 1"));
        }
        let (lo, hi) = self.snr_range_db;
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(Error::invalid("snr_range_db must be a finite (lo, hi)"));
        }
        Ok(())
    }
}

/// Per-run diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean monitor-split ELBO after each completed epoch.
    pub monitor_elbo: Vec<f64>,
    pub best_epoch: usize,
    /// Mean training loss over the first epoch; pinned by tests as the
    /// determinism witness.
    pub first_epoch_mean_loss: f64,
    /// (epoch, step) where a non-finite loss or factorization failure
    /// aborted training, if any.
    pub diverged: Option<(usize, usize)>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ModelParameters,
    pub report: TrainReport,
}

/// One flattened training snapshot.
struct Item {
    y: Vec<Complex64>,
    noise_var: f64,
}

fn flatten_samples(dataset: &Dataset, indices: &[usize], domain: StreamDomain, a: u64) -> Vec<Item> {
    let per_sample: Vec<Vec<Item>> = indices
        .par_iter()
        .map(|&i| {
            let mut rng = substream(dataset.seed, domain, a, i as u64);
            let batch = dataset.samples[i].realize(&mut rng);
            let (n, t) = batch.y.dim();
            (0..t)
                .map(|col| Item {
                    y: (0..n).map(|row| batch.y[(row, col)]).collect(),
                    noise_var: batch.noise_var,
                })
                .collect()
        })
        .collect();
    per_sample.into_iter().flatten().collect()
}

fn stack_inputs(items: &[Item], order: &[usize], n: usize) -> Array3<f32> {
    let mut x = Array3::<f32>::zeros((order.len(), 2, n));
    for (b, &it) in order.iter().enumerate() {
        for (i, v) in items[it].y.iter().enumerate() {
            x[(b, 0, i)] = v.re as f32;
            x[(b, 1, i)] = v.im as f32;
        }
    }
    x
}

struct ItemTerms {
    rec_loss: f64,
    dc_raw: Vec<f64>,
    dnoise_raw: f64,
}

/// Positivity-map the raw head outputs of row `b` and compute the
/// reconstruction loss with gradients already pulled back through the map.
fn item_terms(
    head: &ElboHead,
    raw: &Array2<f32>,
    b: usize,
    item: &Item,
    variant: VaeVariant,
) -> Result<ItemTerms> {
    let kn = head.kn();
    let c: Vec<f64> = (0..kn).map(|m| positivity(raw[(b, m)] as f64)).collect();
    let noise_var = match variant {
        VaeVariant::KnownNoise => item.noise_var,
        VaeVariant::LearnedNoise => positivity(raw[(b, kn)] as f64),
    };
    let rec = head.rec_loss_and_grad(&c, noise_var, &item.y)?;
    let dc_raw: Vec<f64> = rec
        .dc
        .iter()
        .zip(&c)
        .map(|(g, m)| g * positivity_grad(*m))
        .collect();
    let dnoise_raw = match variant {
        VaeVariant::KnownNoise => 0.0,
        VaeVariant::LearnedNoise => rec.dnoise_var * positivity_grad(noise_var),
    };
    Ok(ItemTerms {
        rec_loss: rec.loss,
        dc_raw,
        dnoise_raw,
    })
}

/// Mean closed-form objective on the monitor split with z = μ (no latent
/// sampling). Factorization failure marks the epoch unusable rather than
/// aborting the run.
fn monitor_elbo(
    model: &VaeModel,
    store: &ParamStore<f32>,
    head: &ElboHead,
    items: &[Item],
    arch: &VaeArch,
) -> f64 {
    let n = arch.n_antennas;
    let kn = head.kn();
    let d = arch.latent_dim;
    let mut total = 0.0f64;
    let chunk_size = 512;
    let mut start = 0;
    while start < items.len() {
        let end = (start + chunk_size).min(items.len());
        let order: Vec<usize> = (start..end).collect();
        let x = stack_inputs(items, &order, n);
        let (mu, lv) = model.encode_eval(store, &x);
        let raw = model.decode_eval(store, &mu);
        for (b, &it) in order.iter().enumerate() {
            let c: Vec<f64> = (0..kn).map(|m| positivity(raw[(b, m)] as f64)).collect();
            let noise_var = match arch.variant {
                VaeVariant::KnownNoise => items[it].noise_var,
                VaeVariant::LearnedNoise => positivity(raw[(b, kn)] as f64),
            };
            let rec = match head.rec_loss(&c, noise_var, &items[it].y) {
                Ok(v) => v,
                Err(_) => return f64::NEG_INFINITY,
            };
            let mean: Vec<f64> = (0..d).map(|j| mu[(b, j)] as f64).collect();
            let var: Vec<f64> = (0..d)
                .map(|j| (lv[(b, j)] as f64).clamp(-60.0, 60.0).exp())
                .collect();
            total += latent_term(&mean, &var) - rec;
        }
        start = end;
    }
    total / items.len() as f64
}

/// Trains a model on the dataset (labels ignored) and returns the
/// checkpoint with the highest monitor ELBO plus a report. A run that
/// diverges after at least one completed epoch returns that best
/// checkpoint with `report.diverged` set; divergence inside the first
/// epoch is an error.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.len() < 2 {
        return Err(Error::invalid(
            "dataset must hold at least 2 samples to split off a monitor set",
        ));
    }
    let (dlo, dhi) = dataset.config.snr_range_db;
    if dlo < config.snr_range_db.0 - 1e-9 || dhi > config.snr_range_db.1 + 1e-9 {
        return Err(Error::Config(format!(
            "dataset SNR range [{dlo}, {dhi}] dB exceeds the configured training range [{}, {}] dB",
            config.snr_range_db.0, config.snr_range_db.1
        )));
    }
    let arch = VaeArch {
        n_antennas: dataset.config.n_antennas,
        oversampling: dataset.config.oversampling,
        latent_dim: config.latent_dim,
        variant: config.variant,
    };
    arch.validate()?;
    let n = arch.n_antennas;
    let d = arch.latent_dim;
    let kn = arch.grid_size();

    let mut store = ParamStore::<f32>::new();
    let mut init_rng = substream(config.seed, StreamDomain::Init, 0, 0);
    let model = VaeModel::build(&arch, &mut store, &mut init_rng)?;
    let head = ElboHead::new(n, arch.oversampling)?;
    let mut adam = Adam::new(&store, config.learning_rate);

    // Every 20th sample (all its snapshots) forms the held-out monitor
    // split, so snapshots of one scene never straddle the boundary.
    let monitor_idx: Vec<usize> = (0..dataset.len()).step_by(20).collect();
    let train_idx: Vec<usize> = (0..dataset.len()).filter(|i| i % 20 != 0).collect();
    if train_idx.is_empty() {
        return Err(Error::invalid("dataset too small: training split is empty"));
    }
    let monitor_items = flatten_samples(dataset, &monitor_idx, StreamDomain::MonitorNoise, 0);

    let mut report = TrainReport {
        monitor_elbo: Vec::with_capacity(config.epochs),
        best_epoch: 0,
        first_epoch_mean_loss: f64::NAN,
        diverged: None,
    };
    let mut best: Option<(ParamStore<f32>, usize, f64)> = None;
    let mut epochs_run = 0;

    'epochs: for epoch in 0..config.epochs {
        let items = flatten_samples(dataset, &train_idx, StreamDomain::EpochNoise, epoch as u64);
        let mut rng = substream(config.seed, StreamDomain::TrainLoop, epoch as u64, 0);
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        let mut step_count = 0usize;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let bsz = batch.len();
            let x = stack_inputs(&items, batch, n);
            let (mu, lv, enc_ctx) = model.encode_train(&mut store, &x);

            // Reparameterize at 64-bit: z = μ + e^{lv/2}·ε.
            let mut z = Array2::<f32>::zeros((bsz, d));
            let mut sigma_eps = Array2::<f64>::zeros((bsz, d));
            let mut lv_clamped = Array2::<f64>::zeros((bsz, d));
            for b in 0..bsz {
                for j in 0..d {
                    let l = (lv[(b, j)] as f64).clamp(-60.0, 60.0);
                    let eps: f64 = rng.sample(StandardNormal);
                    let se = (0.5 * l).exp() * eps;
                    z[(b, j)] = (mu[(b, j)] as f64 + se) as f32;
                    sigma_eps[(b, j)] = se;
                    lv_clamped[(b, j)] = l;
                }
            }
            let (raw, dec_ctx) = model.decode_train(&mut store, &z);

            let terms: Result<Vec<ItemTerms>> = batch
                .par_iter()
                .enumerate()
                .map(|(b, &it)| item_terms(&head, &raw, b, &items[it], config.variant))
                .collect();
            let terms = match terms {
                Ok(t) => t,
                Err(_) => {
                    report.diverged = Some((epoch, step));
                    break 'epochs;
                }
            };

            // loss = (1/B)·Σ_b (rec_b − latent_b); latent gradients are
            // analytic, reconstruction gradients flow back through the
            // decoder and the reparameterization.
            let inv_b = 1.0 / bsz as f64;
            let mut loss = 0.0f64;
            let mut draw = Array2::<f32>::zeros((bsz, arch.head_dim()));
            for (b, t) in terms.iter().enumerate() {
                let mean_b: Vec<f64> = (0..d).map(|j| mu[(b, j)] as f64).collect();
                let var_b: Vec<f64> = (0..d).map(|j| lv_clamped[(b, j)].exp()).collect();
                loss += t.rec_loss - latent_term(&mean_b, &var_b);
                for m in 0..kn {
                    draw[(b, m)] = (t.dc_raw[m] * inv_b) as f32;
                }
                if matches!(config.variant, VaeVariant::LearnedNoise) {
                    draw[(b, kn)] = (t.dnoise_raw * inv_b) as f32;
                }
            }
            loss *= inv_b;
            if !loss.is_finite() {
                report.diverged = Some((epoch, step));
                break 'epochs;
            }
            loss_sum += loss;
            step_count += 1;

            let dz = model.decode_backward(&mut store, &dec_ctx, &draw);
            let mut dmu = Array2::<f32>::zeros((bsz, d));
            let mut dlv = Array2::<f32>::zeros((bsz, d));
            for b in 0..bsz {
                for j in 0..d {
                    let dzv = dz[(b, j)] as f64;
                    let m = mu[(b, j)] as f64;
                    dmu[(b, j)] = (dzv + m * inv_b) as f32;
                    // Saturated log-variances stop both the reparam path
                    // and the KL path.
                    let l = lv_clamped[(b, j)];
                    dlv[(b, j)] = if l.abs() < 60.0 {
                        (dzv * 0.5 * sigma_eps[(b, j)] + (l.exp() - 1.0) * 0.5 * inv_b) as f32
                    } else {
                        0.0
                    };
                }
            }
            model.encode_backward(&mut store, &enc_ctx, &dmu, &dlv);
            adam.step(&mut store);
            store.zero_grads();
        }

        epochs_run = epoch + 1;
        if epoch == 0 {
            report.first_epoch_mean_loss = loss_sum / step_count.max(1) as f64;
        }
        let elbo = monitor_elbo(&model, &store, &head, &monitor_items, &arch);
        report.monitor_elbo.push(elbo);
        if best.as_ref().map_or(true, |(_, _, b)| elbo > *b) {
            best = Some((store.clone(), epoch, elbo));
        }
    }

    match best {
        Some((best_store, best_epoch, best_elbo)) => {
            report.best_epoch = best_epoch;
            let meta = TrainMeta {
                seed: config.seed,
                epochs_run,
                best_epoch,
                best_monitor_elbo: best_elbo,
            };
            Ok(TrainOutcome {
                params: ModelParameters::from_parts(model, best_store, meta),
                report,
            })
        }
        None => {
            let (epoch, step) = report.diverged.unwrap_or((0, 0));
            Err(Error::TrainingDiverged {
                epoch,
                step,
                detail: "no completed epoch to fall back to".into(),
            })
        }
    }
}
