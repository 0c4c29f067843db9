//! Encoder/decoder architecture and frozen-model inference.
//!
//! Encoder: three (conv k7, batch norm, rectifier) blocks over channels
//! 2→16→64→256 at constant length N, then two affine heads to the latent
//! mean and log-variance. Decoder is the mirror: affine from the latent
//! into a 256-channel length-N tensor, three blocks 256→64→16→2, then an
//! affine head from the flattened 2N values to the K·N raw spectral
//! weights (plus one noise logit in the learned-noise variant).

use crate::error::{Error, Result};
use crate::nn::{BatchNorm1d, BnCtx, Conv1d, Conv1dCtx, Linear, LinearCtx, Mode, ParamStore, Scalar};
use crate::sim::SnapshotBatch;
use crate::vae::{positivity, DecoderSpectrum, LatentPosterior, VaeArch, VaeVariant};
use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

const ENC_CHANNELS: [usize; 4] = [2, 16, 64, 256];
const DEC_CHANNELS: [usize; 4] = [256, 64, 16, 2];
const KERNEL: usize = 7;

#[derive(Clone, Debug)]
pub(crate) struct VaeModel {
    pub arch: VaeArch,
    enc_conv: Vec<Conv1d>,
    enc_bn: Vec<BatchNorm1d>,
    enc_mu: Linear,
    enc_lv: Linear,
    dec_lin: Linear,
    dec_conv: Vec<Conv1d>,
    dec_bn: Vec<BatchNorm1d>,
    dec_head: Linear,
}

pub(crate) struct EncCtx<F> {
    conv: Vec<Conv1dCtx<F>>,
    bn: Vec<BnCtx<F>>,
    relu_y: Vec<Array3<F>>,
    mu: LinearCtx<F>,
    lv: LinearCtx<F>,
    bsz: usize,
}

pub(crate) struct DecCtx<F> {
    lin: LinearCtx<F>,
    conv: Vec<Conv1dCtx<F>>,
    bn: Vec<BnCtx<F>>,
    relu_y: Vec<Array3<F>>,
    head: LinearCtx<F>,
    bsz: usize,
}

impl VaeModel {
    /// Registers all tensors in a fixed order (encoder blocks, encoder
    /// heads, decoder), so initialization and checkpoints are reproducible.
    pub fn build<F: Scalar, R: Rng + ?Sized>(
        arch: &VaeArch,
        store: &mut ParamStore<F>,
        rng: &mut R,
    ) -> Result<Self> {
        arch.validate()?;
        let n = arch.n_antennas;
        let feat = ENC_CHANNELS[3] * n;
        let mut enc_conv = Vec::new();
        let mut enc_bn = Vec::new();
        for i in 0..3 {
            enc_conv.push(Conv1d::new(
                store,
                rng,
                &format!("enc.conv{}", i + 1),
                ENC_CHANNELS[i],
                ENC_CHANNELS[i + 1],
                KERNEL,
            ));
            enc_bn.push(BatchNorm1d::new(
                store,
                &format!("enc.bn{}", i + 1),
                ENC_CHANNELS[i + 1],
            ));
        }
        let enc_mu = Linear::new(store, rng, "enc.mu", feat, arch.latent_dim);
        let enc_lv = Linear::new(store, rng, "enc.logvar", feat, arch.latent_dim);
        let dec_lin = Linear::new(store, rng, "dec.lin", arch.latent_dim, feat);
        let mut dec_conv = Vec::new();
        let mut dec_bn = Vec::new();
        for i in 0..3 {
            dec_conv.push(Conv1d::new(
                store,
                rng,
                &format!("dec.conv{}", i + 1),
                DEC_CHANNELS[i],
                DEC_CHANNELS[i + 1],
                KERNEL,
            ));
            dec_bn.push(BatchNorm1d::new(
                store,
                &format!("dec.bn{}", i + 1),
                DEC_CHANNELS[i + 1],
            ));
        }
        let dec_head = Linear::new(store, rng, "dec.head", DEC_CHANNELS[3] * n, arch.head_dim());
        Ok(Self {
            arch: *arch,
            enc_conv,
            enc_bn,
            enc_mu,
            enc_lv,
            dec_lin,
            dec_conv,
            dec_bn,
            dec_head,
        })
    }

    pub fn encode_train<F: Scalar>(
        &self,
        store: &mut ParamStore<F>,
        x: &Array3<F>,
    ) -> (Array2<F>, Array2<F>, EncCtx<F>) {
        let bsz = x.dim().0;
        let mut conv = Vec::new();
        let mut bn = Vec::new();
        let mut relu_y = Vec::new();
        let mut cur = x.clone();
        for i in 0..3 {
            let (y, cctx) = self.enc_conv[i].forward(store, &cur);
            conv.push(cctx);
            let (y, bctx) = self.enc_bn[i].forward(store, &y, Mode::Train);
            bn.push(bctx);
            let y = crate::nn::relu(&y);
            relu_y.push(y.clone());
            cur = y;
        }
        let n = self.arch.n_antennas;
        let flat = cur
            .into_shape_with_order((bsz, ENC_CHANNELS[3] * n))
            .expect("contiguous");
        let (mu, mu_ctx) = self.enc_mu.forward(store, &flat);
        let (lv, lv_ctx) = self.enc_lv.forward(store, &flat);
        (
            mu,
            lv,
            EncCtx {
                conv,
                bn,
                relu_y,
                mu: mu_ctx,
                lv: lv_ctx,
                bsz,
            },
        )
    }

    pub fn encode_backward<F: Scalar>(
        &self,
        store: &mut ParamStore<F>,
        ctx: &EncCtx<F>,
        dmu: &Array2<F>,
        dlv: &Array2<F>,
    ) {
        let n = self.arch.n_antennas;
        let dflat_mu = self.enc_mu.backward(store, &ctx.mu, dmu);
        let dflat_lv = self.enc_lv.backward(store, &ctx.lv, dlv);
        let dflat = dflat_mu + dflat_lv;
        let mut dcur = dflat
            .into_shape_with_order((ctx.bsz, ENC_CHANNELS[3], n))
            .expect("contiguous");
        for i in (0..3).rev() {
            let drelu = crate::nn::relu_backward(&ctx.relu_y[i], &dcur);
            let dbn = self.enc_bn[i].backward(store, &ctx.bn[i], &drelu);
            dcur = self.enc_conv[i].backward(store, &ctx.conv[i], &dbn);
        }
        // Gradient w.r.t. the input snapshot is discarded.
    }

    pub fn encode_eval<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        x: &Array3<F>,
    ) -> (Array2<F>, Array2<F>) {
        let bsz = x.dim().0;
        let mut cur = x.clone();
        for i in 0..3 {
            let (y, _) = self.enc_conv[i].forward(store, &cur);
            let y = self.enc_bn[i].forward_eval(store, &y);
            cur = crate::nn::relu(&y);
        }
        let n = self.arch.n_antennas;
        let flat = cur
            .into_shape_with_order((bsz, ENC_CHANNELS[3] * n))
            .expect("contiguous");
        let (mu, _) = self.enc_mu.forward(store, &flat);
        let (lv, _) = self.enc_lv.forward(store, &flat);
        (mu, lv)
    }

    pub fn decode_train<F: Scalar>(
        &self,
        store: &mut ParamStore<F>,
        z: &Array2<F>,
    ) -> (Array2<F>, DecCtx<F>) {
        let bsz = z.dim().0;
        let n = self.arch.n_antennas;
        let (flat, lin_ctx) = self.dec_lin.forward(store, z);
        let mut cur = flat
            .into_shape_with_order((bsz, DEC_CHANNELS[0], n))
            .expect("contiguous");
        let mut conv = Vec::new();
        let mut bn = Vec::new();
        let mut relu_y = Vec::new();
        for i in 0..3 {
            let (y, cctx) = self.dec_conv[i].forward(store, &cur);
            conv.push(cctx);
            let (y, bctx) = self.dec_bn[i].forward(store, &y, Mode::Train);
            bn.push(bctx);
            let y = crate::nn::relu(&y);
            relu_y.push(y.clone());
            cur = y;
        }
        let flat_out = cur
            .into_shape_with_order((bsz, DEC_CHANNELS[3] * n))
            .expect("contiguous");
        let (raw, head_ctx) = self.dec_head.forward(store, &flat_out);
        (
            raw,
            DecCtx {
                lin: lin_ctx,
                conv,
                bn,
                relu_y,
                head: head_ctx,
                bsz,
            },
        )
    }

    pub fn decode_backward<F: Scalar>(
        &self,
        store: &mut ParamStore<F>,
        ctx: &DecCtx<F>,
        draw: &Array2<F>,
    ) -> Array2<F> {
        let n = self.arch.n_antennas;
        let dflat_out = self.dec_head.backward(store, &ctx.head, draw);
        let mut dcur = dflat_out
            .into_shape_with_order((ctx.bsz, DEC_CHANNELS[3], n))
            .expect("contiguous");
        for i in (0..3).rev() {
            let drelu = crate::nn::relu_backward(&ctx.relu_y[i], &dcur);
            let dbn = self.dec_bn[i].backward(store, &ctx.bn[i], &drelu);
            dcur = self.dec_conv[i].backward(store, &ctx.conv[i], &dbn);
        }
        let dflat = dcur
            .into_shape_with_order((ctx.bsz, DEC_CHANNELS[0] * n))
            .expect("contiguous");
        self.dec_lin.backward(store, &ctx.lin, &dflat)
    }

    pub fn decode_eval<F: Scalar>(&self, store: &ParamStore<F>, z: &Array2<F>) -> Array2<F> {
        let bsz = z.dim().0;
        let n = self.arch.n_antennas;
        let (flat, _) = self.dec_lin.forward(store, z);
        let mut cur = flat
            .into_shape_with_order((bsz, DEC_CHANNELS[0], n))
            .expect("contiguous");
        for i in 0..3 {
            let (y, _) = self.dec_conv[i].forward(store, &cur);
            let y = self.dec_bn[i].forward_eval(store, &y);
            cur = crate::nn::relu(&y);
        }
        let flat_out = cur
            .into_shape_with_order((bsz, DEC_CHANNELS[3] * n))
            .expect("contiguous");
        let (raw, _) = self.dec_head.forward(store, &flat_out);
        raw
    }
}

/// Training provenance stored in checkpoints.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_monitor_elbo: f64,
}

/// A frozen model: architecture plus all tensors. Immutable after load;
/// inference entry points take `&self` and are safe to call concurrently.
#[derive(Clone, Debug)]
pub struct ModelParameters {
    pub arch: VaeArch,
    pub train_meta: TrainMeta,
    pub(crate) model: VaeModel,
    pub(crate) store: ParamStore<f32>,
}

impl ModelParameters {
    pub(crate) fn from_parts(
        model: VaeModel,
        store: ParamStore<f32>,
        train_meta: TrainMeta,
    ) -> Self {
        Self {
            arch: model.arch,
            train_meta,
            model,
            store,
        }
    }

    /// Freshly initialized, untrained model (deterministic in the seed).
    pub fn init(arch: &VaeArch, seed: u64) -> Result<Self> {
        let mut store = ParamStore::<f32>::new();
        let mut rng = crate::sim::substream(seed, crate::sim::StreamDomain::Init, 0, 0);
        let model = VaeModel::build(arch, &mut store, &mut rng)?;
        Ok(Self::from_parts(model, store, TrainMeta::default()))
    }
}

/// Stack one complex snapshot as a [1, 2, N] real tensor (channel 0 the
/// real part, channel 1 the imaginary part).
fn snapshot_to_input(y: &[Complex64]) -> Array3<f32> {
    let n = y.len();
    let mut x = Array3::<f32>::zeros((1, 2, n));
    for (i, v) in y.iter().enumerate() {
        x[(0, 0, i)] = v.re as f32;
        x[(0, 1, i)] = v.im as f32;
    }
    x
}

/// Encode one snapshot into its latent posterior. Deterministic in
/// (y, params); the variance comes out of a positivity map.
pub fn encode(y: &[Complex64], params: &ModelParameters) -> Result<LatentPosterior> {
    if y.len() != params.arch.n_antennas {
        return Err(Error::dims(format!(
            "snapshot length {} vs array size {}",
            y.len(),
            params.arch.n_antennas
        )));
    }
    if y.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::invalid("snapshot must be finite"));
    }
    let x = snapshot_to_input(y);
    let (mu, lv) = params.model.encode_eval(&params.store, &x);
    let mean: Vec<f64> = mu.row(0).iter().map(|v| *v as f64).collect();
    // Clamped exponential keeps the variance positive and finite for any
    // activation the head can produce.
    let variance: Vec<f64> = lv
        .row(0)
        .iter()
        .map(|v| (*v as f64).clamp(-60.0, 60.0).exp())
        .collect();
    LatentPosterior::new(mean, variance)
}

/// Decode a latent vector into the spectral weights. The known-noise
/// variant needs the externally supplied noise variance; the learned-noise
/// variant emits its own and rejects an external one.
pub fn decode(
    z: &[f64],
    params: &ModelParameters,
    known_noise_var: Option<f64>,
) -> Result<DecoderSpectrum> {
    if z.len() != params.arch.latent_dim {
        return Err(Error::dims(format!(
            "latent length {} vs model dim {}",
            z.len(),
            params.arch.latent_dim
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("latent vector must be finite"));
    }
    let zt = Array2::from_shape_fn((1, z.len()), |(_, j)| z[j] as f32);
    let raw = params.model.decode_eval(&params.store, &zt);
    let kn = params.arch.grid_size();
    let c: Vec<f64> = (0..kn).map(|m| positivity(raw[(0, m)] as f64)).collect();
    let noise_var = match (params.arch.variant, known_noise_var) {
        (VaeVariant::KnownNoise, Some(v)) => v,
        (VaeVariant::KnownNoise, None) => {
            return Err(Error::invalid(
                "known-noise model needs the noise variance at decode time",
            ))
        }
        (VaeVariant::LearnedNoise, None) => positivity(raw[(0, kn)] as f64),
        (VaeVariant::LearnedNoise, Some(_)) => {
            return Err(Error::invalid(
                "learned-noise model emits its own noise variance",
            ))
        }
    };
    DecoderSpectrum::new(c, noise_var)
}

/// Snapshot-averaged decoder spectrum: each snapshot is encoded separately,
/// its posterior mean decoded (no latent sampling), and the weight vectors
/// are averaged. Learned-noise models average their noise output likewise.
pub fn infer_spectrum(batch: &SnapshotBatch, params: &ModelParameters) -> Result<DecoderSpectrum> {
    let (n, t) = batch.y.dim();
    if n != params.arch.n_antennas {
        return Err(Error::dims(format!(
            "batch rows {n} vs array size {}",
            params.arch.n_antennas
        )));
    }
    if t == 0 {
        return Err(Error::invalid("batch must contain snapshots"));
    }
    let kn = params.arch.grid_size();
    let mut c_acc = vec![0.0f64; kn];
    let mut noise_acc = 0.0f64;
    let mut snapshot = vec![Complex64::new(0.0, 0.0); n];
    for col in 0..t {
        for row in 0..n {
            snapshot[row] = batch.y[(row, col)];
        }
        let posterior = encode(&snapshot, params)?;
        let spec = match params.arch.variant {
            VaeVariant::KnownNoise => decode(&posterior.mean, params, Some(batch.noise_var))?,
            VaeVariant::LearnedNoise => decode(&posterior.mean, params, None)?,
        };
        for (acc, v) in c_acc.iter_mut().zip(&spec.c) {
            *acc += v;
        }
        noise_acc += spec.noise_var;
    }
    let scale = 1.0 / t as f64;
    let c: Vec<f64> = c_acc.into_iter().map(|v| v * scale).collect();
    let noise_var = match params.arch.variant {
        VaeVariant::KnownNoise => batch.noise_var,
        VaeVariant::LearnedNoise => noise_acc * scale,
    };
    DecoderSpectrum::new(c, noise_var)
}
