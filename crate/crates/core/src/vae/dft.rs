//! Oversampled DFT matrix and the structured decoder covariance built
//! from it.

use crate::error::{Error, Result};
use crate::vae::DecoderSpectrum;
use ndarray::Array2;
use num_complex::Complex64;
use std::f64::consts::TAU;

/// Oversampled DFT matrix of shape KN x N: entry (m, n) is
/// exp(-j 2π m n / (KN)) / sqrt(KN). Columns are orthonormal, so the
/// conjugate transpose is a left inverse (a right inverse does not exist
/// for K > 1).
pub fn build_oversampled_dft(n_antennas: usize, oversampling: usize) -> Result<Array2<Complex64>> {
    if n_antennas < 2 {
        return Err(Error::invalid("n_antennas must be >= 2"));
    }
    if oversampling < 1 {
        return Err(Error::invalid("oversampling must be >= 1"));
    }
    let kn = n_antennas
        .checked_mul(oversampling)
        .filter(|kn| *kn <= 1 << 20)
        .ok_or_else(|| Error::invalid("K*N too large"))?;
    let scale = 1.0 / (kn as f64).sqrt();
    let mut f = Array2::<Complex64>::zeros((kn, n_antennas));
    for m in 0..kn {
        for n in 0..n_antennas {
            // Reduce the phase index modulo KN before multiplying, so huge
            // m*n products cannot lose precision.
            let idx = (m * n) % kn;
            let phase = -TAU * idx as f64 / kn as f64;
            f[(m, n)] = Complex64::from_polar(scale, phase);
        }
    }
    Ok(f)
}

/// Signal part F̃ᴴ diag(c) F̃ of the decoder covariance, without the noise
/// term.
pub(crate) fn signal_covariance(c: &[f64], dft: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    let (kn, n) = dft.dim();
    if c.len() != kn {
        return Err(Error::dims(format!(
            "spectrum has {} weights, DFT has {} rows",
            c.len(),
            kn
        )));
    }
    let mut cov = Array2::<Complex64>::zeros((n, n));
    // Rank-one accumulation over rows: C = Σ_m c_m conj(F̃[m,:])ᵀ F̃[m,:].
    // Lower triangle only, mirrored afterwards, so the result is exactly
    // hermitian.
    for m in 0..kn {
        let row = dft.row(m);
        let cm = c[m];
        for p in 0..n {
            let left = row[p].conj() * cm;
            for q in 0..=p {
                cov[(p, q)] += left * row[q];
            }
        }
    }
    for p in 0..n {
        for q in (p + 1)..n {
            cov[(p, q)] = cov[(q, p)].conj();
        }
        cov[(p, p)] = Complex64::new(cov[(p, p)].re, 0.0);
    }
    Ok(cov)
}

/// Assemble the decoder covariance F̃ᴴ diag(c) F̃ + noise_var·I.
pub fn build_covariance(
    spectrum: &DecoderSpectrum,
    dft: &Array2<Complex64>,
) -> Result<Array2<Complex64>> {
    let n = dft.dim().1;
    let mut cov = signal_covariance(&spectrum.c, dft)?;
    for p in 0..n {
        cov[(p, p)] += spectrum.noise_var;
    }
    Ok(cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::hermitian_eigenvalues_desc;
    use crate::sim::{steering_vector, substream, StreamDomain};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn gram_is_identity(f: &Array2<Complex64>, tol: f64) {
        let (kn, n) = f.dim();
        for a in 0..n {
            for b in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for m in 0..kn {
                    acc += f[(m, a)].conj() * f[(m, b)];
                }
                let expect = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(acc.re, expect, epsilon = tol);
                assert_abs_diff_eq!(acc.im, 0.0, epsilon = tol);
            }
        }
    }

    #[test]
    fn unitary_case_and_oversampled_case_have_orthonormal_columns() {
        gram_is_identity(&build_oversampled_dft(2, 1).unwrap(), 1e-12);
        gram_is_identity(&build_oversampled_dft(4, 4).unwrap(), 1e-12);
        gram_is_identity(&build_oversampled_dft(16, 4).unwrap(), 1e-12);
    }

    #[test]
    fn rows_are_steering_vectors_on_the_frequency_grid() {
        // Row m has phase progression -2π m n / (KN); a steering vector at
        // angle θ has -π n sinθ. They coincide when sinθ = 2m/(KN), which
        // stays in range for m < KN/2.
        let (n, k) = (6, 2);
        let kn = n * k;
        let f = build_oversampled_dft(n, k).unwrap();
        for m in 0..kn / 2 {
            let theta = (2.0 * m as f64 / kn as f64).asin();
            let a = steering_vector(theta, n).unwrap();
            let first = f[(m, 0)];
            for q in 0..n {
                let rescaled = f[(m, q)] / first;
                assert_abs_diff_eq!(rescaled.re, a[q].re, epsilon = 1e-12);
                assert_abs_diff_eq!(rescaled.im, a[q].im, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(build_oversampled_dft(1, 4).is_err());
        assert!(build_oversampled_dft(4, 0).is_err());
        assert!(build_oversampled_dft(usize::MAX / 2, 4).is_err());
    }

    #[test]
    fn flat_spectrum_gives_scaled_identity() {
        let f = build_oversampled_dft(5, 3).unwrap();
        let spec = DecoderSpectrum::new(vec![0.7; 15], 0.3).unwrap();
        let cov = build_covariance(&spec, &f).unwrap();
        for p in 0..5 {
            for q in 0..5 {
                let expect = if p == q { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(cov[(p, q)].re, expect, epsilon = 1e-12);
                assert_abs_diff_eq!(cov[(p, q)].im, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn critically_sampled_case_is_circulant_with_eigenvalues_c_plus_noise() {
        let n = 6;
        let f = build_oversampled_dft(n, 1).unwrap();
        let mut rng = substream(5, StreamDomain::Sample, 0, 0);
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
        let noise = 0.25;
        let cov = build_covariance(&DecoderSpectrum::new(c.clone(), noise).unwrap(), &f).unwrap();
        // Circulant: entry (p, q) depends only on (p - q) mod n.
        for p in 0..n {
            for q in 0..n {
                let r = cov[((p + 1) % n, (q + 1) % n)];
                assert_abs_diff_eq!(cov[(p, q)].re, r.re, epsilon = 1e-12);
                assert_abs_diff_eq!(cov[(p, q)].im, r.im, epsilon = 1e-12);
            }
        }
        let mut eig = hermitian_eigenvalues_desc(&cov).unwrap();
        let mut expect: Vec<f64> = c.iter().map(|v| v + noise).collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (e, x) in eig.iter().zip(&expect) {
            assert_abs_diff_eq!(e, x, epsilon = 1e-10);
        }
    }

    #[test]
    fn matches_dense_triple_product_oracle() {
        let (n, k) = (8, 4);
        let f = build_oversampled_dft(n, k).unwrap();
        let mut rng = substream(6, StreamDomain::Sample, 0, 0);
        let c: Vec<f64> = (0..n * k).map(|_| rng.gen_range(0.01..3.0)).collect();
        let noise = 0.05;
        let cov = build_covariance(&DecoderSpectrum::new(c.clone(), noise).unwrap(), &f).unwrap();

        // Oracle: explicit F̃ᴴ D F̃ + βI with nalgebra products.
        let fm = crate::linalg::to_na(&f);
        let d = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            n * k,
            c.iter().map(|v| Complex64::new(*v, 0.0)),
        ));
        let oracle = fm.adjoint() * d * fm
            + nalgebra::DMatrix::identity(n, n) * Complex64::new(noise, 0.0);
        for p in 0..n {
            for q in 0..n {
                assert_abs_diff_eq!(cov[(p, q)].re, oracle[(p, q)].re, epsilon = 1e-12);
                assert_abs_diff_eq!(cov[(p, q)].im, oracle[(p, q)].im, epsilon = 1e-12);
            }
        }

        // Hermitian and bounded below by the noise floor.
        for p in 0..n {
            for q in 0..n {
                let m = cov[(p, q)];
                let mt = cov[(q, p)].conj();
                assert_abs_diff_eq!(m.re, mt.re, epsilon = 1e-12);
                assert_abs_diff_eq!(m.im, mt.im, epsilon = 1e-12);
            }
        }
        let eig = hermitian_eigenvalues_desc(&cov).unwrap();
        assert!(eig.iter().all(|v| *v >= noise - 1e-10));
    }

    #[test]
    fn covariance_rejects_length_mismatch() {
        let f = build_oversampled_dft(4, 2).unwrap();
        let spec = DecoderSpectrum::new(vec![1.0; 7], 0.1).unwrap();
        assert!(build_covariance(&spec, &f).is_err());
    }
}
