//! Supervised baseline classifier over sample covariances.
//!
//! The published network this stands in for is cited rather than specified
//! in its source, so the architecture here is a compact covariance-input
//! classifier: the trace-normalized sample covariance as a two-channel N×N
//! map, three strided convolution blocks, global average pooling, and an
//! affine head over the L_max+1 classes. The ten-snapshot training
//! protocol is enforced by the benchmark layer, not here; any T >= 1 is a
//! valid input.

use crate::error::{Error, Result};
use crate::ic::sample_covariance;
use crate::nn::checkpoint::{read_bundle, write_bundle, TensorBundle};
use crate::nn::{
    global_avg_pool2d, global_avg_pool2d_backward, softmax_cross_entropy, Adam, BatchNorm1d,
    BnCtx, Conv2d, Conv2dCtx, Linear, LinearCtx, Mode, ParamStore, Scalar,
};
use crate::sim::{substream, Dataset, SnapshotBatch, StreamDomain};
use ndarray::{Array2, Array3, Array4};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

const CHANNELS: [usize; 4] = [2, 16, 32, 64];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovNetConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl CovNetConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.batch_size < 1 || self.epochs < 1 {
            return Err(Error::invalid("batch_size and epochs must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CovNetTrainMeta {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

#[derive(Clone, Debug)]
struct CovNet {
    conv: Vec<Conv2d>,
    bn: Vec<BatchNorm1d>,
    head: Linear,
}

struct CovCtx<F> {
    conv: Vec<Conv2dCtx<F>>,
    bn: Vec<BnCtx<F>>,
    relu_y: Vec<Array4<F>>,
    head: LinearCtx<F>,
    last_hw: (usize, usize),
}

// BatchNorm1d normalizes per channel over (batch, length); applying it to a
// [B, C, H, W] map via a [B, C, H*W] view is exactly 2-d batch norm.
fn bn_over_map<F: Scalar>(
    bn: &BatchNorm1d,
    store: &mut ParamStore<F>,
    x: &Array4<F>,
    mode: Mode,
) -> (Array4<F>, BnCtx<F>) {
    let (b, c, h, w) = x.dim();
    let flat = x
        .clone()
        .into_shape_with_order((b, c, h * w))
        .expect("contiguous");
    let (y, ctx) = bn.forward(store, &flat, mode);
    (
        y.into_shape_with_order((b, c, h, w)).expect("contiguous"),
        ctx,
    )
}

fn bn_over_map_eval<F: Scalar>(
    bn: &BatchNorm1d,
    store: &ParamStore<F>,
    x: &Array4<F>,
) -> Array4<F> {
    let (b, c, h, w) = x.dim();
    let flat = x
        .clone()
        .into_shape_with_order((b, c, h * w))
        .expect("contiguous");
    bn.forward_eval(store, &flat)
        .into_shape_with_order((b, c, h, w))
        .expect("contiguous")
}

fn relu_map<F: Scalar>(x: &Array4<F>) -> Array4<F> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

fn relu_map_backward<F: Scalar>(y: &Array4<F>, dy: &Array4<F>) -> Array4<F> {
    let mut dx = dy.clone();
    ndarray::azip!((d in &mut dx, &yv in y) {
        if yv <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}

impl CovNet {
    fn build<F: Scalar, R: Rng + ?Sized>(
        n_classes: usize,
        store: &mut ParamStore<F>,
        rng: &mut R,
    ) -> Self {
        let mut conv = Vec::new();
        let mut bn = Vec::new();
        for i in 0..3 {
            conv.push(Conv2d::new(
                store,
                rng,
                &format!("cov.conv{}", i + 1),
                CHANNELS[i],
                CHANNELS[i + 1],
                3,
                2,
                1,
            ));
            bn.push(BatchNorm1d::new(
                store,
                &format!("cov.bn{}", i + 1),
                CHANNELS[i + 1],
            ));
        }
        let head = Linear::new(store, rng, "cov.head", CHANNELS[3], n_classes);
        Self { conv, bn, head }
    }

    fn forward_train<F: Scalar>(
        &self,
        store: &mut ParamStore<F>,
        x: &Array4<F>,
    ) -> (Array2<F>, CovCtx<F>) {
        let mut conv = Vec::new();
        let mut bn = Vec::new();
        let mut relu_y = Vec::new();
        let mut cur = x.clone();
        for i in 0..3 {
            let (y, cctx) = self.conv[i].forward(store, &cur);
            conv.push(cctx);
            let (y, bctx) = bn_over_map(&self.bn[i], store, &y, Mode::Train);
            bn.push(bctx);
            let y = relu_map(&y);
            relu_y.push(y.clone());
            cur = y;
        }
        let (_, _, h, w) = cur.dim();
        let pooled = global_avg_pool2d(&cur);
        let (logits, head_ctx) = self.head.forward(store, &pooled);
        (
            logits,
            CovCtx {
                conv,
                bn,
                relu_y,
                head: head_ctx,
                last_hw: (h, w),
            },
        )
    }

    fn backward<F: Scalar>(&self, store: &mut ParamStore<F>, ctx: &CovCtx<F>, dlogits: &Array2<F>) {
        let dpooled = self.head.backward(store, &ctx.head, dlogits);
        let mut dcur = global_avg_pool2d_backward(&dpooled, ctx.last_hw.0, ctx.last_hw.1);
        for i in (0..3).rev() {
            let drelu = relu_map_backward(&ctx.relu_y[i], &dcur);
            let (b, c, h, w) = drelu.dim();
            let flat = drelu
                .into_shape_with_order((b, c, h * w))
                .expect("contiguous");
            let dbn = self.bn[i].backward(store, &ctx.bn[i], &flat);
            let dbn = dbn.into_shape_with_order((b, c, h, w)).expect("contiguous");
            dcur = self.conv[i].backward(store, &ctx.conv[i], &dbn);
        }
    }

    fn forward_eval<F: Scalar>(&self, store: &ParamStore<F>, x: &Array4<F>) -> Array2<F> {
        let mut cur = x.clone();
        for i in 0..3 {
            let (y, _) = self.conv[i].forward(store, &cur);
            let y = bn_over_map_eval(&self.bn[i], store, &y);
            cur = relu_map(&y);
        }
        let pooled = global_avg_pool2d(&cur);
        let (logits, _) = self.head.forward(store, &pooled);
        logits
    }
}

/// Frozen classifier; inference entry points take `&self` and are safe to
/// call concurrently.
#[derive(Clone, Debug)]
pub struct CovNetParameters {
    pub n_antennas: usize,
    pub n_classes: usize,
    pub train_meta: CovNetTrainMeta,
    model: CovNet,
    store: ParamStore<f32>,
}

impl CovNetParameters {
    fn from_parts(
        n_antennas: usize,
        n_classes: usize,
        model: CovNet,
        store: ParamStore<f32>,
        train_meta: CovNetTrainMeta,
    ) -> Self {
        Self {
            n_antennas,
            n_classes,
            train_meta,
            model,
            store,
        }
    }

    /// Freshly initialized, untrained classifier (deterministic in the seed).
    pub fn init(n_antennas: usize, n_classes: usize, seed: u64) -> Result<Self> {
        if n_antennas < 2 || n_classes < 2 {
            return Err(Error::invalid("need n_antennas >= 2 and n_classes >= 2"));
        }
        let mut store = ParamStore::<f32>::new();
        // Instance index 1: the companion generative model claims 0.
        let mut rng = substream(seed, StreamDomain::Init, 1, 0);
        let model = CovNet::build(n_classes, &mut store, &mut rng);
        Ok(Self::from_parts(
            n_antennas,
            n_classes,
            model,
            store,
            CovNetTrainMeta::default(),
        ))
    }

    pub(crate) fn export_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        self.store.export_tensors()
    }
}

/// Trace-normalized sample covariance as a 2-channel N×N real map
/// (channel 0 real part, channel 1 imaginary part). An all-zero batch falls
/// back to unit normalization and yields the zero map.
pub fn covnet_features(batch: &SnapshotBatch) -> Result<Array3<f32>> {
    let cov = sample_covariance(&batch.y)?;
    let n = cov.dim().0;
    let trace: f64 = (0..n).map(|i| cov[(i, i)].re).sum();
    let norm = if trace > 0.0 { trace } else { 1.0 };
    let mut x = Array3::<f32>::zeros((2, n, n));
    for i in 0..n {
        for j in 0..n {
            x[(0, i, j)] = (cov[(i, j)].re / norm) as f32;
            x[(1, i, j)] = (cov[(i, j)].im / norm) as f32;
        }
    }
    Ok(x)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CovNetReport {
    /// Validation accuracy after each completed epoch.
    pub val_accuracy: Vec<f64>,
    pub best_epoch: usize,
    pub first_epoch_mean_loss: f64,
}

#[derive(Debug)]
pub struct CovNetOutcome {
    pub params: CovNetParameters,
    pub report: CovNetReport,
}

fn stack_features(features: &[Array3<f32>], order: &[usize], n: usize) -> Array4<f32> {
    let mut x = Array4::<f32>::zeros((order.len(), 2, n, n));
    for (b, &i) in order.iter().enumerate() {
        x.index_axis_mut(ndarray::Axis(0), b).assign(&features[i]);
    }
    x
}

fn realize_features(
    dataset: &Dataset,
    indices: &[usize],
    domain: StreamDomain,
    a: u64,
) -> Result<Vec<Array3<f32>>> {
    use rayon::prelude::*;
    indices
        .par_iter()
        .map(|&i| {
            let mut rng = substream(dataset.seed, domain, a, i as u64);
            covnet_features(&dataset.samples[i].realize(&mut rng))
        })
        .collect()
}

fn accuracy(
    model: &CovNet,
    store: &ParamStore<f32>,
    features: &[Array3<f32>],
    labels: &[usize],
    n: usize,
) -> f64 {
    let mut correct = 0usize;
    let chunk = 256;
    let mut start = 0;
    while start < features.len() {
        let end = (start + chunk).min(features.len());
        let order: Vec<usize> = (start..end).collect();
        let x = stack_features(features, &order, n);
        let logits = model.forward_eval(store, &x);
        for (b, &i) in order.iter().enumerate() {
            if argmax_row(&logits, b) == labels[i] {
                correct += 1;
            }
        }
        start = end;
    }
    correct as f64 / features.len() as f64
}

fn argmax_row(logits: &Array2<f32>, row: usize) -> usize {
    let mut best = 0;
    let mut best_v = f32::NEG_INFINITY;
    for (j, v) in logits.row(row).iter().enumerate() {
        if *v > best_v {
            best_v = *v;
            best = j;
        }
    }
    best
}

/// Supervised training on labeled snapshot realizations. Every tenth sample
/// is held out with frozen noise for validation; the checkpoint with the
/// best validation accuracy wins. Noise on the training split is redrawn
/// each epoch. A non-finite loss aborts the run.
pub fn covnet_train(dataset: &Dataset, config: &CovNetConfig) -> Result<CovNetOutcome> {
    config.validate()?;
    if dataset.len() < 2 {
        return Err(Error::invalid(
            "dataset must hold at least 2 samples to split off a validation set",
        ));
    }
    let n = dataset.config.n_antennas;
    let n_classes = dataset.config.max_order + 1;

    let mut store = ParamStore::<f32>::new();
    let model = {
        let mut rng = substream(config.seed, StreamDomain::Init, 1, 0);
        CovNet::build(n_classes, &mut store, &mut rng)
    };

    let val_idx: Vec<usize> = (0..dataset.len()).filter(|i| i % 10 == 0).collect();
    let train_idx: Vec<usize> = (0..dataset.len()).filter(|i| i % 10 != 0).collect();
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::invalid("dataset too small to split"));
    }
    let labels: Vec<usize> = dataset.labels.iter().map(|&l| l as usize).collect();
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::invalid(format!(
            "label {bad} exceeds class count {n_classes}"
        )));
    }

    // Validation noise is frozen for the whole run so accuracies are
    // comparable across epochs.
    let val_features = realize_features(dataset, &val_idx, StreamDomain::MonitorNoise, 0)?;
    let val_labels: Vec<usize> = val_idx.iter().map(|&i| labels[i]).collect();

    let mut adam = Adam::new(&store, config.learning_rate);
    let mut report = CovNetReport {
        val_accuracy: Vec::with_capacity(config.epochs),
        best_epoch: 0,
        first_epoch_mean_loss: f64::NAN,
    };
    let mut best: Option<(f64, ParamStore<f32>, usize)> = None;

    for epoch in 0..config.epochs {
        let train_features =
            realize_features(dataset, &train_idx, StreamDomain::EpochNoise, epoch as u64)?;
        let train_labels: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();

        let mut order: Vec<usize> = (0..train_idx.len()).collect();
        let mut loop_rng = substream(config.seed, StreamDomain::TrainLoop, epoch as u64, 1);
        order.shuffle(&mut loop_rng);

        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = stack_features(&train_features, chunk, n);
            let y: Vec<usize> = chunk.iter().map(|&i| train_labels[i]).collect();
            let (logits, ctx) = model.forward_train(&mut store, &x);
            let (loss, dlogits) = softmax_cross_entropy(&logits, &y);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    step,
                    detail: format!("loss {loss}"),
                });
            }
            model.backward(&mut store, &ctx, &dlogits);
            adam.step(&mut store);
            store.zero_grads();
            epoch_loss += loss;
            steps += 1;
        }
        if epoch == 0 {
            report.first_epoch_mean_loss = epoch_loss / steps.max(1) as f64;
        }

        let acc = accuracy(&model, &store, &val_features, &val_labels, n);
        report.val_accuracy.push(acc);
        let improved = best.as_ref().map_or(true, |(b, _, _)| acc > *b);
        if improved {
            best = Some((acc, store.clone(), epoch));
        }
    }

    let (best_acc, best_store, best_epoch) =
        best.expect("epochs >= 1 guarantees at least one eval");
    report.best_epoch = best_epoch;
    let meta = CovNetTrainMeta {
        seed: config.seed,
        epochs_run: config.epochs,
        best_epoch,
        best_val_accuracy: best_acc,
    };
    Ok(CovNetOutcome {
        params: CovNetParameters::from_parts(n, n_classes, model, best_store, meta),
        report,
    })
}

/// Batched prediction over many snapshot batches; identical results to
/// `covnet_predict` per element, one network pass per 256 inputs.
pub(crate) fn covnet_predict_many(
    batches: &[SnapshotBatch],
    params: &CovNetParameters,
) -> Result<Vec<usize>> {
    let n = params.n_antennas;
    let mut feats = Vec::with_capacity(batches.len());
    for batch in batches {
        if batch.y.dim().0 != n {
            return Err(Error::invalid(format!(
                "batch has {} rows, classifier expects {n}",
                batch.y.dim().0
            )));
        }
        feats.push(covnet_features(batch)?);
    }
    let mut preds = Vec::with_capacity(feats.len());
    let mut start = 0;
    while start < feats.len() {
        let end = (start + 256).min(feats.len());
        let order: Vec<usize> = (start..end).collect();
        let x = stack_features(&feats, &order, n);
        let logits = params.model.forward_eval(&params.store, &x);
        for b in 0..order.len() {
            preds.push(argmax_row(&logits, b));
        }
        start = end;
    }
    Ok(preds)
}

/// Predicted source count: argmax over class logits, ties broken toward the
/// lowest class index.
pub fn covnet_predict(batch: &SnapshotBatch, params: &CovNetParameters) -> Result<usize> {
    if batch.y.dim().0 != params.n_antennas {
        return Err(Error::invalid(format!(
            "batch has {} rows, classifier expects {}",
            batch.y.dim().0,
            params.n_antennas
        )));
    }
    let feat = covnet_features(batch)?;
    let x = stack_features(std::slice::from_ref(&feat), &[0], params.n_antennas);
    let logits = params.model.forward_eval(&params.store, &x);
    Ok(argmax_row(&logits, 0))
}

#[derive(Serialize, Deserialize)]
struct CovNetMeta {
    n_antennas: usize,
    n_classes: usize,
    train: CovNetTrainMeta,
}

pub fn save_covnet(path: &Path, params: &CovNetParameters) -> Result<()> {
    let meta = CovNetMeta {
        n_antennas: params.n_antennas,
        n_classes: params.n_classes,
        train: params.train_meta.clone(),
    };
    let bundle = TensorBundle {
        kind: "covnet".to_string(),
        meta: serde_json::to_value(&meta).map_err(|e| Error::Format(e.to_string()))?,
        tensors: params.export_tensors(),
    };
    write_bundle(&bundle, path)
}

pub fn load_covnet(path: &Path) -> Result<CovNetParameters> {
    let bundle = read_bundle(path)?;
    if bundle.kind != "covnet" {
        return Err(Error::Format(format!(
            "expected a covnet checkpoint, found kind {:?}",
            bundle.kind
        )));
    }
    let meta: CovNetMeta =
        serde_json::from_value(bundle.meta.clone()).map_err(|e| Error::Format(e.to_string()))?;
    let mut params = CovNetParameters::init(meta.n_antennas, meta.n_classes, 0)?;
    params.store.import_tensors(&bundle.tensors)?;
    params.train_meta = meta.train;
    Ok(params)
}
