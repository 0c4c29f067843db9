//! Information-criterion baselines (AIC and MDL) on sample-covariance
//! eigenvalues, in the Wax-Kailath form: for each candidate order k the
//! likelihood term compares geometric and arithmetic means of the N-k
//! smallest eigenvalues, and a parameter-count penalty k(2N-k) is added
//! (scaled by log(T)/2 for MDL).

use crate::error::{Error, Result};
use crate::linalg::hermitian_eigenvalues_desc;
use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IcRule {
    Aic,
    Mdl,
}

impl IcRule {
    fn penalty(self, k: usize, n: usize, t: usize) -> f64 {
        let count = (k * (2 * n - k)) as f64;
        match self {
            IcRule::Aic => count,
            IcRule::Mdl => 0.5 * count * (t as f64).ln(),
        }
    }
}

/// Eigenvalues of a sample covariance, sorted descending, plus the snapshot
/// count that produced them.
#[derive(Clone, Debug)]
pub struct EigenProfile {
    eigenvalues: Vec<f64>,
    t_snapshots: usize,
}

impl EigenProfile {
    /// Values may arrive unsorted; tiny negatives down to -1e-10 are an
    /// accepted artifact of Hermitian eigensolvers and are clipped to 0.
    pub fn new(mut eigenvalues: Vec<f64>, t_snapshots: usize) -> Result<Self> {
        if t_snapshots < 1 {
            return Err(Error::invalid("t_snapshots must be >= 1"));
        }
        if eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("eigenvalues must be finite"));
        }
        if let Some(v) = eigenvalues.iter().find(|v| **v < -1e-10) {
            return Err(Error::invalid(format!(
                "eigenvalue {v} is negative beyond numerical slack"
            )));
        }
        for v in &mut eigenvalues {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        eigenvalues.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
        Ok(Self {
            eigenvalues,
            t_snapshots,
        })
    }

    pub fn from_covariance(cov: &Array2<Complex64>, t_snapshots: usize) -> Result<Self> {
        Self::new(hermitian_eigenvalues_desc(cov)?, t_snapshots)
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn t_snapshots(&self) -> usize {
        self.t_snapshots
    }
}

#[derive(Clone, Debug)]
pub struct IcResult {
    pub selected_order: usize,
    /// Criterion value per candidate order 0..=min(N, T)-1.
    pub criterion_values: Vec<f64>,
    pub rule: IcRule,
}

/// Sample covariance (1/T) * sum_t y(t) y(t)^H of an N x T snapshot matrix.
pub fn sample_covariance(y: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    let (n, t) = y.dim();
    if n == 0 || t == 0 {
        return Err(Error::invalid("snapshot matrix must be nonempty"));
    }
    let mut cov = Array2::<Complex64>::zeros((n, n));
    let scale = 1.0 / t as f64;
    for col in y.columns() {
        for i in 0..n {
            // Fill the lower triangle only; mirror afterwards.
            for j in 0..=i {
                cov[(i, j)] += col[i] * col[j].conj() * scale;
            }
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            cov[(i, j)] = cov[(j, i)].conj();
        }
        cov[(i, i)] = Complex64::new(cov[(i, i)].re, 0.0);
    }
    Ok(cov)
}

/// Select the model order minimizing the chosen information criterion.
/// Candidates run over 0..=min(N, T)-1: with T < N the sample covariance
/// has at most T meaningful eigenvalues.
pub fn ic_select(profile: &EigenProfile, rule: IcRule) -> Result<IcResult> {
    let n = profile.eigenvalues.len();
    let t = profile.t_snapshots;
    if n < 2 {
        return Err(Error::invalid("need at least 2 eigenvalues"));
    }
    let lambda_max = profile.eigenvalues[0];
    // Relative floor keeps logs finite on rank-deficient covariances; a
    // zero spectrum degrades to "all equal" rather than NaN.
    let floor = if lambda_max > 0.0 {
        1e-12 * lambda_max
    } else {
        f64::MIN_POSITIVE
    };
    let vals: Vec<f64> = profile.eigenvalues.iter().map(|v| v.max(floor)).collect();

    let candidates = n.min(t);
    let mut criterion_values = Vec::with_capacity(candidates);
    for k in 0..candidates {
        let tail = &vals[k..];
        let m = tail.len() as f64;
        let mean_log: f64 = tail.iter().map(|v| v.ln()).sum::<f64>() / m;
        let arith: f64 = tail.iter().sum::<f64>() / m;
        // -T(N-k) * ln(g_k/a_k), with ln g_k expanded as the mean log.
        let likelihood = -(t as f64) * m * (mean_log - arith.ln());
        criterion_values.push(likelihood + rule.penalty(k, n, t));
    }
    let selected_order = criterion_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite criterion"))
        .map(|(k, _)| k)
        .expect("at least one candidate");
    Ok(IcResult {
        selected_order,
        criterion_values,
        rule,
    })
}
