//! One-dimensional Gaussian mixture fitted by expectation-maximization.
//! Initialization is percentile-based, so the fit is deterministic in the
//! input data alone.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

const VARIANCE_FLOOR: f64 = 1e-6;
const MAX_ITERS: usize = 500;
const LL_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Mixture components, sorted by ascending mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gmm1d {
    pub components: Vec<GmmComponent>,
}

impl Gmm1d {
    /// log(w_k · N(x; μ_k, σ²_k)); −∞ for a dead component.
    fn log_joint(&self, x: f64, k: usize) -> f64 {
        let c = &self.components[k];
        if c.weight <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let d = x - c.mean;
        c.weight.ln() - 0.5 * (std::f64::consts::TAU * c.variance).ln()
            - d * d / (2.0 * c.variance)
    }

    pub fn log_likelihood(&self, x: f64) -> f64 {
        let logs: Vec<f64> = (0..self.components.len())
            .map(|k| self.log_joint(x, k))
            .collect();
        logsumexp(&logs)
    }

    /// Posterior component probabilities at x.
    pub fn posteriors(&self, x: f64) -> Vec<f64> {
        let logs: Vec<f64> = (0..self.components.len())
            .map(|k| self.log_joint(x, k))
            .collect();
        let lse = logsumexp(&logs);
        logs.iter().map(|l| (l - lse).exp()).collect()
    }

    /// Maximum-posterior component index at x.
    pub fn map_component(&self, x: f64) -> usize {
        (0..self.components.len())
            .max_by(|&a, &b| {
                self.log_joint(x, a)
                    .partial_cmp(&self.log_joint(x, b))
                    .unwrap()
            })
            .expect("mixture has components")
    }
}

fn logsumexp(logs: &[f64]) -> f64 {
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// EM fit; returns the mixture and the per-iteration log-likelihood trace.
pub(crate) fn fit_gmm_1d_traced(data: &[f64], n_components: usize) -> Result<(Gmm1d, Vec<f64>)> {
    if n_components < 1 {
        return Err(Error::invalid("n_components must be >= 1"));
    }
    if data.len() < 8 * n_components {
        return Err(Error::invalid(format!(
            "need at least {} points for {} components, got {}",
            8 * n_components,
            n_components,
            data.len()
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("data must be finite"));
    }
    let n = data.len() as f64;
    let mean: f64 = data.iter().sum::<f64>() / n;
    let var: f64 = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var < VARIANCE_FLOOR {
        return Err(Error::DegenerateData(format!(
            "data variance {var:.3e} is below the variance floor {VARIANCE_FLOOR:.0e}; \
             the mixture is unidentifiable"
        )));
    }

    // Percentile initialization: component k starts at the
    // (2k+1)/(2K) quantile, shared global variance, uniform weights.
    let mut sorted = data.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let components = (0..n_components)
        .map(|k| {
            let q = (2 * k + 1) as f64 / (2 * n_components) as f64;
            let idx = (q * (sorted.len() - 1) as f64).round() as usize;
            GmmComponent {
                weight: 1.0 / n_components as f64,
                mean: sorted[idx],
                variance: var.max(VARIANCE_FLOOR),
            }
        })
        .collect();
    let mut gmm = Gmm1d { components };

    let mut trace = Vec::new();
    let mut resp = vec![0.0f64; data.len() * n_components];
    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..MAX_ITERS {
        // E-step in the log domain.
        let mut ll = 0.0;
        for (i, &x) in data.iter().enumerate() {
            let logs: Vec<f64> = (0..n_components).map(|k| gmm.log_joint(x, k)).collect();
            let lse = logsumexp(&logs);
            ll += lse;
            for k in 0..n_components {
                resp[i * n_components + k] = (logs[k] - lse).exp();
            }
        }
        debug_assert!(
            ll + 1e-9 >= prev_ll,
            "EM log-likelihood decreased: {prev_ll} -> {ll}"
        );
        trace.push(ll);
        if (ll - prev_ll).abs() < LL_TOL {
            break;
        }
        prev_ll = ll;

        // M-step. A component that lost all responsibility keeps its
        // location so the update stays well-defined.
        for k in 0..n_components {
            let rk: f64 = (0..data.len()).map(|i| resp[i * n_components + k]).sum();
            gmm.components[k].weight = rk / n;
            if rk > 1e-300 {
                let mu = (0..data.len())
                    .map(|i| resp[i * n_components + k] * data[i])
                    .sum::<f64>()
                    / rk;
                let v = (0..data.len())
                    .map(|i| {
                        let d = data[i] - mu;
                        resp[i * n_components + k] * d * d
                    })
                    .sum::<f64>()
                    / rk;
                gmm.components[k].mean = mu;
                gmm.components[k].variance = v.max(VARIANCE_FLOOR);
            }
        }
    }

    gmm.components
        .sort_by(|a, b| a.mean.partial_cmp(&b.mean).unwrap());
    Ok((gmm, trace))
}

/// Fits an `n_components` mixture to 1-D data. Deterministic; converges
/// when the log-likelihood change drops below 1e-8 or after 500 rounds.
pub fn fit_gmm_1d(data: &[f64], n_components: usize) -> Result<Gmm1d> {
    fit_gmm_1d_traced(data, n_components).map(|(gmm, _)| gmm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{substream, StreamDomain};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn recovers_two_separated_gaussians() {
        let mut rng = substream(60, StreamDomain::Sample, 0, 0);
        let a = Normal::new(0.0, 1.0).unwrap();
        let b = Normal::new(10.0, 1.0).unwrap();
        let mut data = Vec::new();
        for _ in 0..1500 {
            data.push(a.sample(&mut rng));
            data.push(b.sample(&mut rng));
        }
        let gmm = fit_gmm_1d(&data, 2).unwrap();
        assert!((gmm.components[0].mean - 0.0).abs() < 0.1);
        assert!((gmm.components[1].mean - 10.0).abs() < 0.1);
        assert!((gmm.components[0].weight - 0.5).abs() < 0.05);
    }

    #[test]
    fn identical_data_is_degenerate() {
        let err = fit_gmm_1d(&vec![2.5; 64], 4).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::DegenerateData(_)));
        assert!(msg.contains("1e-6"), "message should name the floor: {msg}");
    }

    #[test]
    fn too_few_points_rejected() {
        assert!(fit_gmm_1d(&[1.0, 2.0, 3.0], 2).is_err());
    }

    #[test]
    fn fit_is_deterministic() {
        let mut rng = substream(61, StreamDomain::Sample, 0, 0);
        let data: Vec<f64> = (0..200).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let a = fit_gmm_1d(&data, 3).unwrap();
        let b = fit_gmm_1d(&data, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn log_likelihood_trace_is_monotone_on_mixed_data() {
        let mut rng = substream(62, StreamDomain::Sample, 0, 0);
        let n0 = Normal::new(-2.0, 0.5).unwrap();
        let n1 = Normal::new(1.0, 1.5).unwrap();
        let data: Vec<f64> = (0..400)
            .map(|i| {
                if i % 2 == 0 {
                    n0.sample(&mut rng)
                } else {
                    n1.sample(&mut rng)
                }
            })
            .collect();
        let (_, trace) = fit_gmm_1d_traced(&data, 2).unwrap();
        assert!(trace.len() >= 2);
        for w in trace.windows(2) {
            assert!(w[1] + 1e-9 >= w[0], "ll decreased: {} -> {}", w[0], w[1]);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn em_invariants_hold_on_arbitrary_data(
            mut data in proptest::collection::vec(-50.0f64..50.0, 40..160),
            spread in 0.5f64..5.0,
        ) {
            // Guarantee identifiability: inject spread.
            data[0] -= 10.0 * spread;
            let last = data.len() - 1;
            data[last] += 10.0 * spread;
            let (gmm, trace) = fit_gmm_1d_traced(&data, 4).unwrap();
            for w in trace.windows(2) {
                prop_assert!(w[1] + 1e-6 >= w[0]);
            }
            let wsum: f64 = gmm.components.iter().map(|c| c.weight).sum();
            prop_assert!((wsum - 1.0).abs() < 1e-9);
            for c in &gmm.components {
                prop_assert!(c.variance >= VARIANCE_FLOOR - 1e-15);
            }
            for pair in gmm.components.windows(2) {
                prop_assert!(pair[0].mean <= pair[1].mean);
            }
        }
    }
}
