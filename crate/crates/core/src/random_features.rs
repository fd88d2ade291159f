//! Random ReLU features: the centered arc-cosine kernel, its Monte Carlo
//! estimate, feature-matrix rank and the width needed for full rank.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::linalg::{gaussian_matrix, op_norm, singular_values, sym_min_eigenvalue};
use crate::rng::RngStream;

/// Constant subtracted from each ReLU feature before taking second moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Centering {
    /// `E[relu(z)] = 1/sqrt(2π)`, which makes the kernel a covariance.
    #[default]
    AnalyticReluMean,
    /// `sqrt(2/π) = E|z|`. Not the ReLU mean, so the kernel is not a covariance.
    RootTwoOverPi,
}

impl Centering {
    pub fn constant(self) -> f64 {
        match self {
            Centering::AnalyticReluMean => 1.0 / (2.0 * PI).sqrt(),
            Centering::RootTwoOverPi => (2.0 / PI).sqrt(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Centering::AnalyticReluMean => "analytic_relu_mean",
            Centering::RootTwoOverPi => "root_two_over_pi",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelEstimate {
    pub h_hat: DMatrix<f64>,
    pub samples_m: usize,
    pub centering: Centering,
    pub lambda_min_hat: f64,
}

fn check_unit_columns(x: &DMatrix<f64>) -> Result<()> {
    for (j, col) in x.column_iter().enumerate() {
        if (col.norm() - 1.0).abs() > 1e-9 {
            return invalid(format!("column {j} has norm {}, expected 1", col.norm()));
        }
    }
    Ok(())
}

/// `E[relu(u) relu(v)]` for standard normals with correlation `rho`.
pub fn relu_cross_moment(rho: f64) -> f64 {
    let rho = rho.clamp(-1.0, 1.0);
    ((1.0 - rho * rho).sqrt() + rho * (PI - rho.acos())) / (2.0 * PI)
}

/// Closed-form kernel for unit-norm columns.
pub fn kernel_closed_form(x: &DMatrix<f64>, centering: Centering) -> Result<DMatrix<f64>> {
    check_unit_columns(x)?;
    let gram = x.transpose() * x;
    let c0 = centering.constant();
    let n = x.ncols();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let rho = if i == j { 1.0 } else { gram[(i, j)] };
        relu_cross_moment(rho) - c0 * c0
    }))
}

/// Monte Carlo estimate from `m` Gaussian directions, in parallel chunks with
/// a fixed reduction order.
pub fn kernel_monte_carlo(x: &DMatrix<f64>, m: usize, centering: Centering, stream: RngStream) -> Result<KernelEstimate> {
    check_unit_columns(x)?;
    if m == 0 {
        return invalid("need at least one sample");
    }
    const CHUNK: usize = 8192;
    let (d, n) = x.shape();
    let c0 = centering.constant();
    let xt = x.transpose();
    let chunks = m.div_ceil(CHUNK);
    let partial: Vec<DMatrix<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = CHUNK.min(m - c * CHUNK);
            let mut rng = stream.child(c as u64).generator();
            let z = gaussian_matrix(d, count, &mut rng);
            let phi = (&xt * z).map(|v| v.max(0.0) - c0);
            &phi * phi.transpose()
        })
        .collect();
    let mut acc = DMatrix::zeros(n, n);
    for p in partial {
        acc += p;
    }
    let h_hat = acc / m as f64;
    let lambda_min_hat = sym_min_eigenvalue(&h_hat);
    Ok(KernelEstimate { h_hat, samples_m: m, centering, lambda_min_hat })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankReport {
    pub rank: usize,
    /// Smallest of the `min(d1, N)` singular values.
    pub sigma_min: f64,
    pub sigma_max: f64,
}

/// Draw `W1` with `N(0, 1/d1)` entries and measure the rank of `relu(W1ᵀX)`.
/// Singular values above `tol * sigma_max * max(d1, N)` count.
pub fn relu_feature_rank(x: &DMatrix<f64>, d1: usize, stream: RngStream, tol: f64) -> Result<(RankReport, DMatrix<f64>)> {
    if d1 == 0 {
        return invalid("d1 must be at least 1");
    }
    let features = relu_features(x, d1, stream);
    let s = singular_values(&features);
    let top = s.first().copied().unwrap_or(0.0);
    let thresh = tol * top * d1.max(x.ncols()) as f64;
    let rank = if top == 0.0 { 0 } else { s.iter().filter(|&&v| v > thresh).count() };
    Ok((RankReport { rank, sigma_min: s.last().copied().unwrap_or(0.0), sigma_max: top }, features))
}

/// `relu(W1ᵀX)` with `W1` entries `N(0, 1/d1)`.
pub fn relu_features(x: &DMatrix<f64>, d1: usize, stream: RngStream) -> DMatrix<f64> {
    let mut rng = stream.generator();
    let w1 = gaussian_matrix(x.nrows(), d1, &mut rng) / (d1 as f64).sqrt();
    (w1.transpose() * x).map(|v| v.max(0.0))
}

/// Width `ceil(c ‖X‖⁴ N log N / λ_min²)` sufficient for full rank.
pub fn width_bound(x: &DMatrix<f64>, kernel_lambda_min: f64, constant_c: f64) -> Result<usize> {
    if !(kernel_lambda_min > 0.0) {
        return invalid(format!("kernel minimum eigenvalue must be positive, got {kernel_lambda_min}"));
    }
    let n = x.ncols() as f64;
    let norm = op_norm(x);
    let v = (constant_c * norm.powi(4) * n * n.ln() / (kernel_lambda_min * kernel_lambda_min)).ceil();
    if !v.is_finite() || v > usize::MAX as f64 {
        return invalid("width bound overflows");
    }
    Ok(v as usize)
}

/// Unit-norm random columns; Gaussian directions are pairwise non-parallel
/// with probability one.
pub fn random_unit_columns(d: usize, n: usize, stream: RngStream) -> DMatrix<f64> {
    let mut rng = stream.generator();
    let mut x = gaussian_matrix(d, n, &mut rng);
    for mut c in x.column_iter_mut() {
        let nrm = c.norm();
        c /= nrm;
    }
    x
}
