use super::{Mode, ParamId, ParamStore, Scalar};
use ndarray::linalg::general_mat_mul;
use ndarray::{Array, Array1, Array2, Array3, Array4, ArrayD, Axis, Dimension, IxDyn};
use rand::Rng;

/// Uniform(-bound, bound) tensor, drawn in deterministic row-major order.
fn uniform_init<F: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    bound: f64,
    rng: &mut R,
) -> ArrayD<F> {
    let n: usize = shape.iter().product();
    let data: Vec<F> = (0..n)
        .map(|_| F::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape/product agree")
}

/// 1-D convolution, stride 1, zero "same" padding (k odd). Implemented as
/// im2col followed by a single GEMM so the inner loop is a matrix product.
#[derive(Clone, Debug)]
pub struct Conv1d {
    w: ParamId,
    b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pad: usize,
}

pub struct Conv1dCtx<F> {
    col: Array2<F>,
    bsz: usize,
    len: usize,
}

impl Conv1d {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
    ) -> Self {
        assert!(k % 2 == 1, "same padding requires odd kernel");
        let bound = 1.0 / ((c_in * k) as f64).sqrt();
        let w = store.register(
            &format!("{name}.weight"),
            uniform_init(&[c_out, c_in, k], bound, rng),
        );
        let b = store.register(&format!("{name}.bias"), uniform_init(&[c_out], bound, rng));
        Self {
            w,
            b,
            c_in,
            c_out,
            k,
            pad: k / 2,
        }
    }

    pub fn forward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        x: &Array3<F>,
    ) -> (Array3<F>, Conv1dCtx<F>) {
        let (bsz, c_in, len) = x.dim();
        assert_eq!(c_in, self.c_in, "channel mismatch");
        let col = im2col1d(x, self.k, self.pad);
        let w = store.value(self.w);
        let w_mat = w
            .view()
            .into_shape_with_order((self.c_out, self.c_in * self.k))
            .expect("contiguous weight");
        let mut y_mat = Array2::<F>::zeros((self.c_out, bsz * len));
        general_mat_mul(F::one(), &w_mat, &col, F::zero(), &mut y_mat);
        let bias = store.value(self.b);
        let mut y = Array3::<F>::zeros((bsz, self.c_out, len));
        for b in 0..bsz {
            for co in 0..self.c_out {
                let add = bias[[co]];
                for t in 0..len {
                    y[(b, co, t)] = y_mat[(co, b * len + t)] + add;
                }
            }
        }
        (y, Conv1dCtx { col, bsz, len })
    }

    pub fn backward<F: Scalar>(
        &self,
        store: &mut ParamStore<F>,
        ctx: &Conv1dCtx<F>,
        dy: &Array3<F>,
    ) -> Array3<F> {
        let (bsz, c_out, len) = dy.dim();
        assert_eq!((bsz, c_out, len), (ctx.bsz, self.c_out, ctx.len));
        let mut dy_mat = Array2::<F>::zeros((c_out, bsz * len));
        for b in 0..bsz {
            for co in 0..c_out {
                for t in 0..len {
                    dy_mat[(co, b * len + t)] = dy[(b, co, t)];
                }
            }
        }
        let mut dw_mat = Array2::<F>::zeros((self.c_out, self.c_in * self.k));
        general_mat_mul(F::one(), &dy_mat, &ctx.col.t(), F::zero(), &mut dw_mat);
        let db = dy_mat.sum_axis(Axis(1));
        let mut dcol = Array2::<F>::zeros((self.c_in * self.k, bsz * len));
        {
            let w = store.value(self.w);
            let w_mat = w
                .view()
                .into_shape_with_order((self.c_out, self.c_in * self.k))
                .expect("contiguous weight");
            general_mat_mul(F::one(), &w_mat.t(), &dy_mat, F::zero(), &mut dcol);
        }
        let dx = col2im1d(&dcol, bsz, self.c_in, len, self.k, self.pad);
        store.accumulate_grad(
            self.w,
            &dw_mat
                .into_shape_with_order((self.c_out, self.c_in, self.k))
                .expect("contiguous")
                .into_dyn(),
        );
        store.accumulate_grad(self.b, &db.into_dyn());
        dx
    }
}

fn im2col1d<F: Scalar>(x: &Array3<F>, k: usize, pad: usize) -> Array2<F> {
    let (bsz, c_in, len) = x.dim();
    let mut col = Array2::<F>::zeros((c_in * k, bsz * len));
    for b in 0..bsz {
        for c in 0..c_in {
            for kk in 0..k {
                let row = c * k + kk;
                let off = kk as isize - pad as isize;
                let t_lo = (-off).max(0) as usize;
                let t_hi = ((len as isize - off).min(len as isize)).max(0) as usize;
                for t in t_lo..t_hi {
                    col[(row, b * len + t)] = x[(b, c, (t as isize + off) as usize)];
                }
            }
        }
    }
    col
}

fn col2im1d<F: Scalar>(
    dcol: &Array2<F>,
    bsz: usize,
    c_in: usize,
    len: usize,
    k: usize,
    pad: usize,
) -> Array3<F> {
    let mut dx = Array3::<F>::zeros((bsz, c_in, len));
    for b in 0..bsz {
        for c in 0..c_in {
            for kk in 0..k {
                let row = c * k + kk;
                let off = kk as isize - pad as isize;
                let t_lo = (-off).max(0) as usize;
                let t_hi = ((len as isize - off).min(len as isize)).max(0) as usize;
                for t in t_lo..t_hi {
                    dx[(b, c, (t as isize + off) as usize)] += dcol[(row, b * len + t)];
                }
            }
        }
    }
    dx
}

/// 2-D convolution with square kernel, configurable stride and zero
/// padding; same im2col + GEMM scheme as `Conv1d`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    w: ParamId,
    b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

pub struct Conv2dCtx<F> {
    col: Array2<F>,
    bsz: usize,
    h_in: usize,
    w_in: usize,
    h_out: usize,
    w_out: usize,
}

impl Conv2d {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let bound = 1.0 / ((c_in * k * k) as f64).sqrt();
        let w = store.register(
            &format!("{name}.weight"),
            uniform_init(&[c_out, c_in, k, k], bound, rng),
        );
        let b = store.register(&format!("{name}.bias"), uniform_init(&[c_out], bound, rng));
        Self {
            w,
            b,
            c_in,
            c_out,
            k,
            stride,
            pad,
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let ho = (h + 2 * self.pad - self.k) / self.stride + 1;
        let wo = (w + 2 * self.pad - self.k) / self.stride + 1;
        (ho, wo)
    }

    pub fn forward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        x: &Array4<F>,
    ) -> (Array4<F>, Conv2dCtx<F>) {
        let (bsz, c_in, h_in, w_in) = x.dim();
        assert_eq!(c_in, self.c_in, "channel mismatch");
        let (h_out, w_out) = self.out_size(h_in, w_in);
        let kk = self.k * self.k;
        let mut col = Array2::<F>::zeros((c_in * kk, bsz * h_out * w_out));
        for b in 0..bsz {
            for c in 0..c_in {
                for ki in 0..self.k {
                    for kj in 0..self.k {
                        let row = c * kk + ki * self.k + kj;
                        for i in 0..h_out {
                            let src_i = (i * self.stride + ki) as isize - self.pad as isize;
                            if src_i < 0 || src_i >= h_in as isize {
                                continue;
                            }
                            for j in 0..w_out {
                                let src_j = (j * self.stride + kj) as isize - self.pad as isize;
                                if src_j < 0 || src_j >= w_in as isize {
                                    continue;
                                }
                                col[(row, (b * h_out + i) * w_out + j)] =
                                    x[(b, c, src_i as usize, src_j as usize)];
                            }
                        }
                    }
                }
            }
        }
        let w_mat = store
            .value(self.w)
            .view()
            .into_shape_with_order((self.c_out, self.c_in * kk))
            .expect("contiguous weight");
        let mut y_mat = Array2::<F>::zeros((self.c_out, bsz * h_out * w_out));
        general_mat_mul(F::one(), &w_mat, &col, F::zero(), &mut y_mat);
        let bias = store.value(self.b);
        let mut y = Array4::<F>::zeros((bsz, self.c_out, h_out, w_out));
        for b in 0..bsz {
            for co in 0..self.c_out {
                let add = bias[[co]];
                for i in 0..h_out {
                    for j in 0..w_out {
                        y[(b, co, i, j)] = y_mat[(co, (b * h_out + i) * w_out + j)] + add;
                    }
                }
            }
        }
        (
            y,
            Conv2dCtx {
                col,
                bsz,
                h_in,
                w_in,
                h_out,
                w_out,
            },
        )
    }

    pub fn backward<F: Scalar>(
        &self,
        store: &mut ParamStore<F>,
        ctx: &Conv2dCtx<F>,
        dy: &Array4<F>,
    ) -> Array4<F> {
        let (bsz, c_out, h_out, w_out) = dy.dim();
        assert_eq!(
            (bsz, c_out, h_out, w_out),
            (ctx.bsz, self.c_out, ctx.h_out, ctx.w_out)
        );
        let kk = self.k * self.k;
        let mut dy_mat = Array2::<F>::zeros((c_out, bsz * h_out * w_out));
        for b in 0..bsz {
            for co in 0..c_out {
                for i in 0..h_out {
                    for j in 0..w_out {
                        dy_mat[(co, (b * h_out + i) * w_out + j)] = dy[(b, co, i, j)];
                    }
                }
            }
        }
        let mut dw_mat = Array2::<F>::zeros((self.c_out, self.c_in * kk));
        general_mat_mul(F::one(), &dy_mat, &ctx.col.t(), F::zero(), &mut dw_mat);
        let db = dy_mat.sum_axis(Axis(1));
        let mut dcol = Array2::<F>::zeros((self.c_in * kk, bsz * h_out * w_out));
        {
            let w_mat = store
                .value(self.w)
                .view()
                .into_shape_with_order((self.c_out, self.c_in * kk))
                .expect("contiguous weight");
            general_mat_mul(F::one(), &w_mat.t(), &dy_mat, F::zero(), &mut dcol);
        }
        let mut dx = Array4::<F>::zeros((bsz, self.c_in, ctx.h_in, ctx.w_in));
        for b in 0..bsz {
            for c in 0..self.c_in {
                for ki in 0..self.k {
                    for kj in 0..self.k {
                        let row = c * kk + ki * self.k + kj;
                        for i in 0..h_out {
                            let src_i = (i * self.stride + ki) as isize - self.pad as isize;
                            if src_i < 0 || src_i >= ctx.h_in as isize {
                                continue;
                            }
                            for j in 0..w_out {
                                let src_j = (j * self.stride + kj) as isize - self.pad as isize;
                                if src_j < 0 || src_j >= ctx.w_in as isize {
                                    continue;
                                }
                                dx[(b, c, src_i as usize, src_j as usize)] +=
                                    dcol[(row, (b * h_out + i) * w_out + j)];
                            }
                        }
                    }
                }
            }
        }
        store.accumulate_grad(
            self.w,
            &dw_mat
                .into_shape_with_order((self.c_out, self.c_in, self.k, self.k))
                .expect("contiguous")
                .into_dyn(),
        );
        store.accumulate_grad(self.b, &db.into_dyn());
        dx
    }
}

/// Batch normalization over the channel axis of a [batch, channel, length]
/// tensor. Training uses biased batch variance for normalization and
/// unbiased variance for the running buffer; eps 1e-5, momentum 0.1.
#[derive(Clone, Debug)]
pub struct BatchNorm1d {
    gamma: ParamId,
    beta: ParamId,
    rmean: ParamId,
    rvar: ParamId,
    pub c: usize,
    eps: f64,
    momentum: f64,
}

pub struct BnCtx<F> {
    xhat: Array3<F>,
    inv: Array1<F>,
    train: bool,
}

impl BatchNorm1d {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, c: usize) -> Self {
        let gamma = store.register(
            &format!("{name}.gamma"),
            ArrayD::from_elem(IxDyn(&[c]), F::one()),
        );
        let beta = store.register(&format!("{name}.beta"), ArrayD::zeros(IxDyn(&[c])));
        let rmean = store.register_buffer(&format!("{name}.running_mean"), ArrayD::zeros(IxDyn(&[c])));
        let rvar = store.register_buffer(
            &format!("{name}.running_var"),
            ArrayD::from_elem(IxDyn(&[c]), F::one()),
        );
        Self {
            gamma,
            beta,
            rmean,
            rvar,
            c,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward<F: Scalar>(
        &self,
        store: &mut ParamStore<F>,
        x: &Array3<F>,
        mode: Mode,
    ) -> (Array3<F>, BnCtx<F>) {
        let (bsz, c, len) = x.dim();
        assert_eq!(c, self.c, "channel mismatch");
        let m = (bsz * len) as f64;
        let mut xhat = Array3::<F>::zeros((bsz, c, len));
        let mut inv = Array1::<F>::zeros(c);
        match mode {
            Mode::Train => {
                assert!(bsz * len > 1, "batch statistics need more than one item");
                let mut means = vec![F::zero(); c];
                let mut vars = vec![F::zero(); c];
                for ch in 0..c {
                    let mut sum = F::zero();
                    for b in 0..bsz {
                        for t in 0..len {
                            sum += x[(b, ch, t)];
                        }
                    }
                    let mean = sum / F::from_f64(m);
                    let mut acc = F::zero();
                    for b in 0..bsz {
                        for t in 0..len {
                            let d = x[(b, ch, t)] - mean;
                            acc += d * d;
                        }
                    }
                    let var = acc / F::from_f64(m);
                    means[ch] = mean;
                    vars[ch] = var;
                    let iv = F::one() / (var + F::from_f64(self.eps)).sqrt();
                    inv[ch] = iv;
                    for b in 0..bsz {
                        for t in 0..len {
                            xhat[(b, ch, t)] = (x[(b, ch, t)] - mean) * iv;
                        }
                    }
                }
                let mom = F::from_f64(self.momentum);
                let keep = F::one() - mom;
                let unbias = F::from_f64(m / (m - 1.0));
                for ch in 0..c {
                    let rm = &mut store.value_mut(self.rmean)[[ch]];
                    *rm = keep * *rm + mom * means[ch];
                }
                for ch in 0..c {
                    let rv = &mut store.value_mut(self.rvar)[[ch]];
                    *rv = keep * *rv + mom * vars[ch] * unbias;
                }
            }
            Mode::Eval => {
                for ch in 0..c {
                    let mean = store.value(self.rmean)[[ch]];
                    let var = store.value(self.rvar)[[ch]];
                    let iv = F::one() / (var + F::from_f64(self.eps)).sqrt();
                    inv[ch] = iv;
                    for b in 0..bsz {
                        for t in 0..len {
                            xhat[(b, ch, t)] = (x[(b, ch, t)] - mean) * iv;
                        }
                    }
                }
            }
        }
        let mut y = Array3::<F>::zeros((bsz, c, len));
        for ch in 0..c {
            let g = store.value(self.gamma)[[ch]];
            let be = store.value(self.beta)[[ch]];
            for b in 0..bsz {
                for t in 0..len {
                    y[(b, ch, t)] = g * xhat[(b, ch, t)] + be;
                }
            }
        }
        (
            y,
            BnCtx {
                xhat,
                inv,
                train: mode == Mode::Train,
            },
        )
    }

    /// Inference-mode forward pass using the running statistics; pure, so
    /// frozen models can serve concurrent callers.
    pub fn forward_eval<F: Scalar>(&self, store: &ParamStore<F>, x: &Array3<F>) -> Array3<F> {
        let (bsz, c, len) = x.dim();
        assert_eq!(c, self.c, "channel mismatch");
        let mut y = Array3::<F>::zeros((bsz, c, len));
        for ch in 0..c {
            let mean = store.value(self.rmean)[[ch]];
            let var = store.value(self.rvar)[[ch]];
            let iv = F::one() / (var + F::from_f64(self.eps)).sqrt();
            let g = store.value(self.gamma)[[ch]];
            let be = store.value(self.beta)[[ch]];
            for b in 0..bsz {
                for t in 0..len {
                    y[(b, ch, t)] = g * (x[(b, ch, t)] - mean) * iv + be;
                }
            }
        }
        y
    }

    pub fn backward<F: Scalar>(
        &self,
        store: &mut ParamStore<F>,
        ctx: &BnCtx<F>,
        dy: &Array3<F>,
    ) -> Array3<F> {
        assert!(ctx.train, "backward requires a training-mode forward");
        let (bsz, c, len) = dy.dim();
        let m = F::from_f64((bsz * len) as f64);
        let mut dgamma = Array1::<F>::zeros(c);
        let mut dbeta = Array1::<F>::zeros(c);
        let mut dx = Array3::<F>::zeros((bsz, c, len));
        for ch in 0..c {
            let mut sum_dy = F::zero();
            let mut sum_dy_xhat = F::zero();
            for b in 0..bsz {
                for t in 0..len {
                    let d = dy[(b, ch, t)];
                    sum_dy += d;
                    sum_dy_xhat += d * ctx.xhat[(b, ch, t)];
                }
            }
            dgamma[ch] = sum_dy_xhat;
            dbeta[ch] = sum_dy;
            let g = store.value(self.gamma)[[ch]];
            let scale = g * ctx.inv[ch] / m;
            for b in 0..bsz {
                for t in 0..len {
                    let d = dy[(b, ch, t)];
                    dx[(b, ch, t)] =
                        scale * (m * d - sum_dy - ctx.xhat[(b, ch, t)] * sum_dy_xhat);
                }
            }
        }
        store.accumulate_grad(self.gamma, &dgamma.into_dyn());
        store.accumulate_grad(self.beta, &dbeta.into_dyn());
        dx
    }
}

/// Affine layer y = x Wᵀ + b over [batch, features].
#[derive(Clone, Debug)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

pub struct LinearCtx<F> {
    x: Array2<F>,
}

impl Linear {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = store.register(
            &format!("{name}.weight"),
            uniform_init(&[out_dim, in_dim], bound, rng),
        );
        let b = store.register(&format!("{name}.bias"), uniform_init(&[out_dim], bound, rng));
        Self {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        x: &Array2<F>,
    ) -> (Array2<F>, LinearCtx<F>) {
        let (bsz, in_dim) = x.dim();
        assert_eq!(in_dim, self.in_dim, "feature mismatch");
        let w = store
            .value(self.w)
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("2-d weight");
        let mut y = Array2::<F>::zeros((bsz, self.out_dim));
        general_mat_mul(F::one(), x, &w.t(), F::zero(), &mut y);
        let bias = store.value(self.b);
        for b in 0..bsz {
            for o in 0..self.out_dim {
                y[(b, o)] += bias[[o]];
            }
        }
        (y, LinearCtx { x: x.clone() })
    }

    pub fn backward<F: Scalar>(
        &self,
        store: &mut ParamStore<F>,
        ctx: &LinearCtx<F>,
        dy: &Array2<F>,
    ) -> Array2<F> {
        let mut dw = Array2::<F>::zeros((self.out_dim, self.in_dim));
        general_mat_mul(F::one(), &dy.t(), &ctx.x, F::zero(), &mut dw);
        let db = dy.sum_axis(Axis(0));
        let mut dx = Array2::<F>::zeros(ctx.x.dim());
        {
            let w = store
                .value(self.w)
                .view()
                .into_dimensionality::<ndarray::Ix2>()
                .expect("2-d weight");
            general_mat_mul(F::one(), dy, &w, F::zero(), &mut dx);
        }
        store.accumulate_grad(self.w, &dw.into_dyn());
        store.accumulate_grad(self.b, &db.into_dyn());
        dx
    }
}

pub fn relu<F: Scalar, D: Dimension>(x: &Array<F, D>) -> Array<F, D> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

/// Gradient through the rectifier given its output (zero slope at the kink).
pub fn relu_backward<F: Scalar, D: Dimension>(y: &Array<F, D>, dy: &Array<F, D>) -> Array<F, D> {
    let mut dx = dy.clone();
    ndarray::azip!((dx in &mut dx, &y in y) {
        if y <= F::zero() {
            *dx = F::zero();
        }
    });
    dx
}

pub fn global_avg_pool2d<F: Scalar>(x: &Array4<F>) -> Array2<F> {
    let (bsz, c, h, w) = x.dim();
    let scale = F::from_f64(1.0 / (h * w) as f64);
    let mut y = Array2::<F>::zeros((bsz, c));
    for b in 0..bsz {
        for ch in 0..c {
            let mut sum = F::zero();
            for i in 0..h {
                for j in 0..w {
                    sum += x[(b, ch, i, j)];
                }
            }
            y[(b, ch)] = sum * scale;
        }
    }
    y
}

pub fn global_avg_pool2d_backward<F: Scalar>(
    dy: &Array2<F>,
    h: usize,
    w: usize,
) -> Array4<F> {
    let (bsz, c) = dy.dim();
    let scale = F::from_f64(1.0 / (h * w) as f64);
    let mut dx = Array4::<F>::zeros((bsz, c, h, w));
    for b in 0..bsz {
        for ch in 0..c {
            let v = dy[(b, ch)] * scale;
            for i in 0..h {
                for j in 0..w {
                    dx[(b, ch, i, j)] = v;
                }
            }
        }
    }
    dx
}

/// Mean cross-entropy over a batch of logits, with the gradient w.r.t. the
/// logits. Log-sum-exp is stabilized by the row maximum.
pub fn softmax_cross_entropy<F: Scalar>(logits: &Array2<F>, labels: &[usize]) -> (f64, Array2<F>) {
    let (bsz, ncls) = logits.dim();
    assert_eq!(bsz, labels.len(), "batch/label mismatch");
    let mut loss = 0.0f64;
    let mut dlogits = Array2::<F>::zeros((bsz, ncls));
    let inv_b = F::from_f64(1.0 / bsz as f64);
    for b in 0..bsz {
        let row = logits.row(b);
        let mx = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut denom = 0.0f64;
        for v in row.iter() {
            denom += (*v - mx).as_f64().exp();
        }
        let log_denom = denom.ln();
        let label = labels[b];
        assert!(label < ncls, "label out of range");
        loss += log_denom - (row[label] - mx).as_f64();
        for k in 0..ncls {
            let p = (row[k] - mx).as_f64().exp() / denom;
            let grad = p - if k == label { 1.0 } else { 0.0 };
            dlogits[(b, k)] = F::from_f64(grad) * inv_b;
        }
    }
    (loss / bsz as f64, dlogits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Adam, Mode, ParamStore};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn rand_array3(shape: (usize, usize, usize), rng: &mut ChaCha12Rng) -> Array3<f64> {
        Array3::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Scalar test loss: sum of y weighted by a fixed random projection,
    /// so d(loss)/dy is the projection itself.
    fn proj<D: Dimension>(shape: D, rng: &mut ChaCha12Rng) -> Array<f64, D> {
        Array::from_shape_simple_fn(shape, || rng.gen_range(-1.0..1.0))
    }

    /// Central finite difference of `loss` w.r.t. every entry of the tensor
    /// behind `id`, compared against `analytic` with relative tolerance 1e-4.
    fn check_param_grad(
        store: &mut ParamStore<f64>,
        id: crate::nn::ParamId,
        analytic: &ArrayD<f64>,
        mut loss: impl FnMut(&mut ParamStore<f64>) -> f64,
    ) {
        let h = 1e-5;
        let n = store.value(id).len();
        for i in 0..n {
            let flat_idx = i;
            let orig = store.value(id).as_slice().unwrap()[flat_idx];
            store.value_mut(id).as_slice_mut().unwrap()[flat_idx] = orig + h;
            let up = loss(store);
            store.value_mut(id).as_slice_mut().unwrap()[flat_idx] = orig - h;
            let down = loss(store);
            store.value_mut(id).as_slice_mut().unwrap()[flat_idx] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = analytic.as_slice().unwrap()[flat_idx];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            assert!(
                ((fd - an) / denom).abs() < 1e-4,
                "grad mismatch at {i}: fd={fd}, analytic={an}"
            );
        }
    }

    #[test]
    fn conv1d_matches_direct_convolution() {
        let mut store = ParamStore::<f64>::new();
        let mut r = rng(1);
        let conv = Conv1d::new(&mut store, &mut r, "c", 3, 2, 5);
        let x = rand_array3((2, 3, 7), &mut r);
        let (y, _) = conv.forward(&store, &x);
        let w = store.value(crate::nn::ParamId::test_only(0));
        let b = store.value(crate::nn::ParamId::test_only(1));
        for bi in 0..2 {
            for co in 0..2 {
                for t in 0..7isize {
                    let mut acc = b[[co]];
                    for ci in 0..3 {
                        for kk in 0..5isize {
                            let src = t + kk - 2;
                            if src >= 0 && src < 7 {
                                acc += w[[co, ci, kk as usize]] * x[(bi, ci, src as usize)];
                            }
                        }
                    }
                    assert_abs_diff_eq!(y[(bi, co, t as usize)], acc, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv1d_gradients_match_finite_differences() {
        let mut store = ParamStore::<f64>::new();
        let mut r = rng(2);
        let conv = Conv1d::new(&mut store, &mut r, "c", 2, 3, 3);
        let x = rand_array3((2, 2, 5), &mut r);
        let p = proj(ndarray::Ix3(2, 3, 5), &mut r);

        let (_, ctx) = conv.forward(&store, &x);
        store.zero_grads();
        let dx = conv.backward(&mut store, &ctx, &p);

        let w_grad = store.grad(crate::nn::ParamId::test_only(0)).clone();
        let b_grad = store.grad(crate::nn::ParamId::test_only(1)).clone();
        let loss = |s: &mut ParamStore<f64>| {
            let (y, _) = conv.forward(s, &x);
            (&y * &p).sum()
        };
        check_param_grad(&mut store, crate::nn::ParamId::test_only(0), &w_grad, loss);
        let loss = |s: &mut ParamStore<f64>| {
            let (y, _) = conv.forward(s, &x);
            (&y * &p).sum()
        };
        check_param_grad(&mut store, crate::nn::ParamId::test_only(1), &b_grad, loss);

        // dx against finite differences on the input.
        let h = 1e-5;
        for b in 0..2 {
            for c in 0..2 {
                for t in 0..5 {
                    let mut xp = x.clone();
                    xp[(b, c, t)] += h;
                    let (yp, _) = conv.forward(&store, &xp);
                    xp[(b, c, t)] -= 2.0 * h;
                    let (ym, _) = conv.forward(&store, &xp);
                    let fd = ((&yp * &p).sum() - (&ym * &p).sum()) / (2.0 * h);
                    assert_abs_diff_eq!(dx[(b, c, t)], fd, epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn conv2d_gradients_match_finite_differences() {
        let mut store = ParamStore::<f64>::new();
        let mut r = rng(3);
        let conv = Conv2d::new(&mut store, &mut r, "c", 2, 3, 3, 2, 1);
        let x = Array4::from_shape_fn((2, 2, 5, 5), |_| r.gen_range(-1.0..1.0));
        let (ho, wo) = conv.out_size(5, 5);
        assert_eq!((ho, wo), (3, 3));
        let p = proj(ndarray::Ix4(2, 3, ho, wo), &mut r);

        let (_, ctx) = conv.forward(&store, &x);
        store.zero_grads();
        let dx = conv.backward(&mut store, &ctx, &p);
        let w_grad = store.grad(crate::nn::ParamId::test_only(0)).clone();
        let loss = |s: &mut ParamStore<f64>| {
            let (y, _) = conv.forward(s, &x);
            (&y * &p).sum()
        };
        check_param_grad(&mut store, crate::nn::ParamId::test_only(0), &w_grad, loss);

        let h = 1e-5;
        for b in 0..2 {
            for c in 0..2 {
                for i in 0..5 {
                    for j in 0..5 {
                        let mut xp = x.clone();
                        xp[(b, c, i, j)] += h;
                        let (yp, _) = conv.forward(&store, &xp);
                        xp[(b, c, i, j)] -= 2.0 * h;
                        let (ym, _) = conv.forward(&store, &xp);
                        let fd = ((&yp * &p).sum() - (&ym * &p).sum()) / (2.0 * h);
                        assert_abs_diff_eq!(dx[(b, c, i, j)], fd, epsilon = 1e-8);
                    }
                }
            }
        }
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut store = ParamStore::<f64>::new();
        let mut r = rng(4);
        let lin = Linear::new(&mut store, &mut r, "l", 4, 3);
        let x = Array2::from_shape_fn((3, 4), |_| r.gen_range(-1.0..1.0));
        let p = proj(ndarray::Ix2(3, 3), &mut r);
        let (_, ctx) = lin.forward(&store, &x);
        store.zero_grads();
        let dx = lin.backward(&mut store, &ctx, &p);
        let w_grad = store.grad(crate::nn::ParamId::test_only(0)).clone();
        let b_grad = store.grad(crate::nn::ParamId::test_only(1)).clone();
        let loss = |s: &mut ParamStore<f64>| {
            let (y, _) = lin.forward(s, &x);
            (&y * &p).sum()
        };
        check_param_grad(&mut store, crate::nn::ParamId::test_only(0), &w_grad, loss);
        let loss = |s: &mut ParamStore<f64>| {
            let (y, _) = lin.forward(s, &x);
            (&y * &p).sum()
        };
        check_param_grad(&mut store, crate::nn::ParamId::test_only(1), &b_grad, loss);

        let h = 1e-5;
        for b in 0..3 {
            for c in 0..4 {
                let mut xp = x.clone();
                xp[(b, c)] += h;
                let (yp, _) = lin.forward(&store, &xp);
                xp[(b, c)] -= 2.0 * h;
                let (ym, _) = lin.forward(&store, &xp);
                let fd = ((&yp * &p).sum() - (&ym * &p).sum()) / (2.0 * h);
                assert_abs_diff_eq!(dx[(b, c)], fd, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn batchnorm_normalizes_in_train_mode() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm1d::new(&mut store, "bn", 2);
        let mut r = rng(5);
        let x = rand_array3((4, 2, 6), &mut r) * 3.0 + 0.7;
        let (y, _) = bn.forward(&mut store, &x, Mode::Train);
        for ch in 0..2 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|b| (0..6).map(move |t| (b, t)))
                .map(|(b, t)| y[(b, ch, t)])
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|u| (u - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert_abs_diff_eq!(m, 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-3);
        }
    }

    #[test]
    fn batchnorm_running_stats_follow_momentum_convention() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm1d::new(&mut store, "bn", 1);
        // Two batch items, one position: batch mean 1.0, biased var 1.0,
        // unbiased var 2.0.
        let mut x = Array3::<f64>::zeros((2, 1, 1));
        x[(0, 0, 0)] = 0.0;
        x[(1, 0, 0)] = 2.0;
        bn.forward(&mut store, &x, Mode::Train);
        let rm = store.value(crate::nn::ParamId::test_only(2))[[0]];
        let rv = store.value(crate::nn::ParamId::test_only(3))[[0]];
        assert_abs_diff_eq!(rm, 0.9 * 0.0 + 0.1 * 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rv, 0.9 * 1.0 + 0.1 * 2.0, epsilon = 1e-12);
        // Eval mode then uses the running stats, not the batch stats.
        let (y, _) = bn.forward(&mut store, &x, Mode::Eval);
        let expect = (0.0 - rm) / (rv + 1e-5).sqrt();
        assert_abs_diff_eq!(y[(0, 0, 0)], expect, epsilon = 1e-12);
    }

    #[test]
    fn batchnorm_gradients_match_finite_differences() {
        let mut r = rng(6);
        let x = rand_array3((3, 2, 4), &mut r);
        let p = proj(ndarray::Ix3(3, 2, 4), &mut r);

        // Fresh store per evaluation: training-mode forward mutates the
        // running buffers, which must not leak into the difference quotient.
        let build = || {
            let mut s = ParamStore::<f64>::new();
            let bn = BatchNorm1d::new(&mut s, "bn", 2);
            // Non-trivial affine params.
            s.value_mut(crate::nn::ParamId::test_only(0))[[0]] = 1.3;
            s.value_mut(crate::nn::ParamId::test_only(0))[[1]] = 0.6;
            s.value_mut(crate::nn::ParamId::test_only(1))[[0]] = -0.2;
            (s, bn)
        };
        let (mut store, bn) = build();
        let (_, ctx) = bn.forward(&mut store, &x, Mode::Train);
        store.zero_grads();
        let dx = bn.backward(&mut store, &ctx, &p);
        let g_grad = store.grad(crate::nn::ParamId::test_only(0)).clone();
        let b_grad = store.grad(crate::nn::ParamId::test_only(1)).clone();

        let loss_at = |xx: &Array3<f64>| {
            let (mut s, bn) = build();
            let (y, _) = bn.forward(&mut s, xx, Mode::Train);
            (&y * &p).sum()
        };
        let h = 1e-5;
        for b in 0..3 {
            for c in 0..2 {
                for t in 0..4 {
                    let mut xp = x.clone();
                    xp[(b, c, t)] += h;
                    let up = loss_at(&xp);
                    xp[(b, c, t)] -= 2.0 * h;
                    let down = loss_at(&xp);
                    let fd = (up - down) / (2.0 * h);
                    assert_abs_diff_eq!(dx[(b, c, t)], fd, epsilon = 1e-6);
                }
            }
        }
        // Affine parameter gradients.
        let (mut store2, bn2) = build();
        let loss = |s: &mut ParamStore<f64>| {
            let (y, _) = bn2.forward(s, &x, Mode::Train);
            (&y * &p).sum()
        };
        check_param_grad(&mut store2, crate::nn::ParamId::test_only(0), &g_grad, loss);
        let loss = |s: &mut ParamStore<f64>| {
            let (y, _) = bn2.forward(s, &x, Mode::Train);
            (&y * &p).sum()
        };
        check_param_grad(&mut store2, crate::nn::ParamId::test_only(1), &b_grad, loss);
    }

    #[test]
    fn relu_forward_backward() {
        let x = ndarray::arr1(&[-1.0f64, 0.0, 2.5]);
        let y = relu(&x);
        assert_eq!(y.as_slice().unwrap(), &[0.0, 0.0, 2.5]);
        let dy = ndarray::arr1(&[1.0f64, 1.0, 1.0]);
        let dx = relu_backward(&y, &dy);
        assert_eq!(dx.as_slice().unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn global_avg_pool_round_trip() {
        let mut r = rng(7);
        let x = Array4::from_shape_fn((2, 3, 4, 4), |_| r.gen_range(-1.0..1.0));
        let y = global_avg_pool2d(&x);
        for b in 0..2 {
            for c in 0..3 {
                let mean = x
                    .index_axis(Axis(0), b)
                    .index_axis(Axis(0), c)
                    .mean()
                    .unwrap();
                assert_abs_diff_eq!(y[(b, c)], mean, epsilon = 1e-12);
            }
        }
        let dy = proj(ndarray::Ix2(2, 3), &mut r);
        let dx = global_avg_pool2d_backward(&dy, 4, 4);
        assert_abs_diff_eq!(dx[(1, 2, 0, 0)], dy[(1, 2)] / 16.0, epsilon = 1e-12);
    }

    #[test]
    fn cross_entropy_analytic_and_gradient() {
        // Uniform logits over 4 classes: loss = ln 4, gradient p - onehot.
        let logits = Array2::<f64>::zeros((1, 4));
        let (loss, d) = softmax_cross_entropy(&logits, &[2]);
        assert_abs_diff_eq!(loss, 4.0f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(d[(0, 2)], 0.25 - 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d[(0, 0)], 0.25, epsilon = 1e-12);

        // Finite-difference check on random logits.
        let mut r = rng(8);
        let logits = Array2::from_shape_fn((3, 5), |_| r.gen_range(-2.0..2.0));
        let labels = [0usize, 3, 4];
        let (_, d) = softmax_cross_entropy(&logits, &labels);
        let h = 1e-6;
        for b in 0..3 {
            for k in 0..5 {
                let mut lp = logits.clone();
                lp[(b, k)] += h;
                let (up, _) = softmax_cross_entropy(&lp, &labels);
                lp[(b, k)] -= 2.0 * h;
                let (down, _) = softmax_cross_entropy(&lp, &labels);
                let fd = (up - down) / (2.0 * h);
                assert_abs_diff_eq!(d[(b, k)], fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn adam_trains_linear_regression() {
        // End-to-end sanity: fit y = 2x - 1 with the full stack.
        let mut store = ParamStore::<f64>::new();
        let mut r = rng(9);
        let lin = Linear::new(&mut store, &mut r, "l", 1, 1);
        let mut adam = Adam::new(&store, 0.05);
        let xs = Array2::from_shape_fn((16, 1), |_| r.gen_range(-1.0..1.0));
        let targets: Vec<f64> = xs.column(0).iter().map(|x| 2.0 * x - 1.0).collect();
        for _ in 0..400 {
            let (y, ctx) = lin.forward(&store, &xs);
            let mut dy = Array2::<f64>::zeros((16, 1));
            for i in 0..16 {
                dy[(i, 0)] = 2.0 * (y[(i, 0)] - targets[i]) / 16.0;
            }
            store.zero_grads();
            lin.backward(&mut store, &ctx, &dy);
            adam.step(&mut store);
        }
        let w = store.value(crate::nn::ParamId::test_only(0))[[0, 0]];
        let b = store.value(crate::nn::ParamId::test_only(1))[[0]];
        assert_abs_diff_eq!(w, 2.0, epsilon = 1e-2);
        assert_abs_diff_eq!(b, -1.0, epsilon = 1e-2);
    }
}
