//! Closed-form ELBO and the analytic gradients of its reconstruction term.
//!
//! The objective for one snapshot y is
//!
//! ```text
//! (1/2)·1ᵀ(log σ²_z − μ²_z − σ²_z) − logdet C − yᴴ C⁻¹ y,
//! C = F̃ᴴ diag(c) F̃ + σ²I
//! ```
//!
//! computed through a Cholesky factorization of C (never an explicit
//! inverse). The gradients of the reconstruction part follow from matrix
//! calculus with f_m the m-th column of F̃ᴴ and w = C⁻¹y:
//!
//! ```text
//! ∂(logdet C + yᴴC⁻¹y)/∂c_m = f_mᴴC⁻¹f_m − |f_mᴴw|²  = ‖L⁻¹f_m‖² − |(F̃w)_m|²
//! ∂(...)/∂σ²               = tr(C⁻¹) − ‖w‖²          = Σ_m‖L⁻¹f_m‖² − ‖w‖²
//! ```
//!
//! where tr(C⁻¹) = Σ_m f_mᴴC⁻¹f_m because Σ_m f_m f_mᴴ = F̃ᴴF̃ = I.

use crate::error::{Error, Result};
use crate::linalg::to_na;
use crate::vae::{build_covariance, build_oversampled_dft, DecoderSpectrum, LatentPosterior};
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use num_complex::Complex64;
use std::f64::consts::TAU;

/// Precomputed structure for repeated ELBO evaluations at fixed (N, K):
/// the covariance is hermitian Toeplitz with first column derived from c,
/// so assembly is O(N·KN) instead of a dense triple product.
pub struct ElboHead {
    n: usize,
    kn: usize,
    /// phases[d·kn + m] = exp(j 2π m d / KN) / KN; t_d = Σ_m phases·c_m.
    phases: Vec<Complex64>,
    /// F̃ᴴ, N×KN; column m is f_m.
    f_adj: DMatrix<Complex64>,
}

/// Reconstruction loss (logdet C + yᴴC⁻¹y) and its gradients.
pub struct RecGrad {
    pub loss: f64,
    pub dc: Vec<f64>,
    pub dnoise_var: f64,
}

/// Logdet from a complex Cholesky factor, validating positive
/// definiteness: nalgebra's factorization takes complex square roots, so
/// on an indefinite matrix it "succeeds" with non-real diagonal pivots
/// instead of returning None. Real positive pivots certify PD.
fn checked_logdet(chol: &nalgebra::Cholesky<Complex64, nalgebra::Dyn>, n: usize) -> Result<f64> {
    let mut logdet = 0.0;
    for i in 0..n {
        let d = chol.l_dirty()[(i, i)];
        if !(d.re > 0.0) || !d.re.is_finite() || d.im.abs() > d.re * 1e-6 {
            return Err(Error::numerical(format!(
                "covariance is not positive definite (pivot {i} = {d})"
            )));
        }
        logdet += d.re.ln();
    }
    Ok(logdet * 2.0)
}

impl ElboHead {
    pub fn new(n_antennas: usize, oversampling: usize) -> Result<Self> {
        let dft = build_oversampled_dft(n_antennas, oversampling)?;
        let kn = n_antennas * oversampling;
        let mut phases = Vec::with_capacity(n_antennas * kn);
        for d in 0..n_antennas {
            for m in 0..kn {
                let idx = (m * d) % kn;
                let phase = TAU * idx as f64 / kn as f64;
                phases.push(Complex64::from_polar(1.0 / kn as f64, phase));
            }
        }
        let f_adj = to_na(&dft).adjoint();
        Ok(Self {
            n: n_antennas,
            kn,
            phases,
            f_adj,
        })
    }

    pub fn kn(&self) -> usize {
        self.kn
    }

    /// Toeplitz assembly of C = F̃ᴴdiag(c)F̃ + σ²I: entry (p, q) is
    /// t_{p−q} with t_d = (1/KN)Σ_m c_m e^{j2πmd/KN}.
    fn assemble(&self, c: &[f64], noise_var: f64) -> DMatrix<Complex64> {
        let mut t = vec![Complex64::new(0.0, 0.0); self.n];
        for d in 0..self.n {
            let row = &self.phases[d * self.kn..(d + 1) * self.kn];
            let mut acc = Complex64::new(0.0, 0.0);
            for (ph, cm) in row.iter().zip(c) {
                acc += ph * *cm;
            }
            t[d] = acc;
        }
        DMatrix::from_fn(self.n, self.n, |p, q| {
            if p == q {
                Complex64::new(t[0].re + noise_var, 0.0)
            } else if p > q {
                t[p - q]
            } else {
                t[q - p].conj()
            }
        })
    }

    fn factorize(
        &self,
        c: &[f64],
        noise_var: f64,
        y: &[Complex64],
    ) -> Result<(nalgebra::Cholesky<Complex64, nalgebra::Dyn>, DVector<Complex64>, f64, f64)> {
        if c.len() != self.kn {
            return Err(Error::dims(format!(
                "spectrum length {} vs grid {}",
                c.len(),
                self.kn
            )));
        }
        if y.len() != self.n {
            return Err(Error::dims(format!(
                "snapshot length {} vs array {}",
                y.len(),
                self.n
            )));
        }
        let cov = self.assemble(c, noise_var);
        let chol = nalgebra::Cholesky::new(cov).ok_or_else(|| {
            Error::numerical(format!(
                "covariance factorization failed (noise_var {noise_var:.3e}, \
                 c range [{:.3e}, {:.3e}])",
                c.iter().cloned().fold(f64::INFINITY, f64::min),
                c.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            ))
        })?;
        let logdet = checked_logdet(&chol, self.n)?;
        let yv = DVector::from_column_slice(y);
        let w = chol.solve(&yv);
        let quad = yv.dotc(&w).re;
        Ok((chol, w, logdet, quad))
    }

    /// Reconstruction loss only (monitor/eval path).
    pub fn rec_loss(&self, c: &[f64], noise_var: f64, y: &[Complex64]) -> Result<f64> {
        let (_, _, logdet, quad) = self.factorize(c, noise_var, y)?;
        Ok(logdet + quad)
    }

    /// Reconstruction loss plus gradients w.r.t. c and the noise variance.
    pub fn rec_loss_and_grad(
        &self,
        c: &[f64],
        noise_var: f64,
        y: &[Complex64],
    ) -> Result<RecGrad> {
        let (chol, w, logdet, quad) = self.factorize(c, noise_var, y)?;
        // S = L⁻¹ F̃ᴴ; column m is L⁻¹ f_m.
        let mut s = self.f_adj.clone();
        chol.l_dirty().solve_lower_triangular_unchecked_mut(&mut s);
        // v = F̃ w, so v_m = f_mᴴ w.
        let v = self.f_adj.adjoint() * &w;
        let mut dc = Vec::with_capacity(self.kn);
        let mut trace_cinv = 0.0;
        for m in 0..self.kn {
            let col_norm: f64 = s.column(m).iter().map(|z| z.norm_sqr()).sum();
            trace_cinv += col_norm;
            dc.push(col_norm - v[m].norm_sqr());
        }
        let dnoise_var = trace_cinv - w.norm_squared();
        Ok(RecGrad {
            loss: logdet + quad,
            dc,
            dnoise_var,
        })
    }
}

/// Latent part of the objective: (1/2)·Σ(log σ² − μ² − σ²).
pub(crate) fn latent_term(mean: &[f64], variance: &[f64]) -> f64 {
    mean.iter()
        .zip(variance)
        .map(|(m, v)| v.ln() - m * m - v)
        .sum::<f64>()
        * 0.5
}

/// Closed-form objective for one snapshot given an explicit covariance.
pub fn elbo_given_covariance(
    y: &[Complex64],
    posterior: &LatentPosterior,
    cov: &Array2<Complex64>,
) -> Result<f64> {
    let n = y.len();
    if cov.dim() != (n, n) {
        return Err(Error::dims(format!(
            "covariance is {:?}, snapshot has length {n}",
            cov.dim()
        )));
    }
    let chol = nalgebra::Cholesky::new(to_na(cov))
        .ok_or_else(|| Error::numerical("covariance is not positive definite"))?;
    let logdet = checked_logdet(&chol, n)?;
    let yv = DVector::from_column_slice(y);
    let w = chol.solve(&yv);
    let quad = yv.dotc(&w).re;
    Ok(latent_term(&posterior.mean, &posterior.variance) - logdet - quad)
}

/// Closed-form objective for one snapshot; the covariance is assembled
/// from the spectrum with the oversampling factor implied by the lengths
/// of `y` and `spectrum.c`.
pub fn elbo_objective(
    y: &[Complex64],
    posterior: &LatentPosterior,
    spectrum: &DecoderSpectrum,
) -> Result<f64> {
    let n = y.len();
    if n < 2 {
        return Err(Error::invalid("snapshot must have at least 2 entries"));
    }
    if spectrum.c.len() % n != 0 {
        return Err(Error::dims(format!(
            "spectrum length {} is not a multiple of snapshot length {n}",
            spectrum.c.len()
        )));
    }
    let k = spectrum.c.len() / n;
    let cov = build_covariance(spectrum, &build_oversampled_dft(n, k)?)?;
    elbo_given_covariance(y, posterior, &cov)
}
