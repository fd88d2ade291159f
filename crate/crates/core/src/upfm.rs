//! Unconstrained positive feature model.
//!
//! Minimizes `(1/N) Σ ℓ(Wᵀh_i, y_i) + λ_W/2 ‖W‖² + λ_H/2 ‖H‖²` over a
//! classifier `W` (D×K) and free nonnegative features `H` (D×N), for the
//! softmax cross-entropy or the squared loss. Provides the closed-form
//! global minimizers, a projected-gradient oracle and a KKT certificate
//! for the cross-entropy case.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{centering_matrix, label_matrix};
use crate::error::{invalid, NcError, Result};
use crate::linalg::{gaussian_matrix, op_norm, sym_eigenvalues};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    SquaredError,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizationParams {
    pub lambda_w: f64,
    pub lambda_h: f64,
}

impl RegularizationParams {
    pub fn new(lambda_w: f64, lambda_h: f64) -> Result<Self> {
        if !(lambda_w > 0.0 && lambda_h > 0.0 && lambda_w.is_finite() && lambda_h.is_finite()) {
            return invalid(format!("regularization must be positive, got {lambda_w}, {lambda_h}"));
        }
        Ok(Self { lambda_w, lambda_h })
    }

    /// Geometric mean `sqrt(λ_W λ_H)`.
    pub fn lambda(&self) -> f64 {
        (self.lambda_w * self.lambda_h).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpfmSolution {
    pub a: f64,
    pub b: f64,
    pub w: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub loss: LossKind,
    pub objective: f64,
    pub k: usize,
    pub n: usize,
}

fn check_sizes(n: usize, k: usize, dim: usize) -> Result<()> {
    if k < 2 || n < 1 {
        return invalid(format!("need K >= 2 and n >= 1, got K={k}, n={n}"));
    }
    if dim < k {
        return invalid(format!("feature dimension D={dim} must be at least K={k}"));
    }
    Ok(())
}

/// Mean loss over the columns of `z` (K×N) against labels `y`.
fn mean_loss(loss: LossKind, z: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let nn = z.ncols() as f64;
    match loss {
        LossKind::CrossEntropy => {
            let mut total = 0.0;
            for (j, col) in z.column_iter().enumerate() {
                let m = col.max();
                let lse = m + col.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                let label = (0..y.nrows()).find(|&r| y[(r, j)] == 1.0).unwrap_or(0);
                total += lse - col[label];
            }
            total / nn
        }
        LossKind::SquaredError => (z - y).norm_squared() / (2.0 * nn),
    }
}

/// Derivative of the mean loss with respect to the logits.
fn loss_logit_grad(loss: LossKind, z: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let nn = z.ncols() as f64;
    match loss {
        LossKind::CrossEntropy => {
            let mut g = z.clone();
            for mut col in g.column_iter_mut() {
                let m = col.max();
                col.apply(|v| *v = (*v - m).exp());
                let s = col.sum();
                col /= s;
            }
            (g - y) / nn
        }
        LossKind::SquaredError => (z - y) / nn,
    }
}

/// Regularized objective at `(W, H)`.
pub fn objective(loss: LossKind, w: &DMatrix<f64>, h: &DMatrix<f64>, k: usize, n: usize, reg: &RegularizationParams) -> f64 {
    let y = label_matrix(k, n).expect("validated sizes");
    let z = w.transpose() * h;
    mean_loss(loss, &z, &y) + 0.5 * reg.lambda_w * w.norm_squared() + 0.5 * reg.lambda_h * h.norm_squared()
}

/// Objective and its gradients with respect to `W` and `H`.
pub fn objective_and_grad(
    loss: LossKind,
    w: &DMatrix<f64>,
    h: &DMatrix<f64>,
    y: &DMatrix<f64>,
    reg: &RegularizationParams,
) -> (f64, DMatrix<f64>, DMatrix<f64>) {
    let z = w.transpose() * h;
    let f = mean_loss(loss, &z, y) + 0.5 * reg.lambda_w * w.norm_squared() + 0.5 * reg.lambda_h * h.norm_squared();
    let g = loss_logit_grad(loss, &z, y);
    let gw = h * g.transpose() + w * reg.lambda_w;
    let gh = w * g + h * reg.lambda_h;
    (f, gw, gh)
}

/// Closed-form global minimizer for the cross-entropy loss.
pub fn ce_closed_form(n: usize, k: usize, reg: &RegularizationParams, dim: usize) -> Result<UpfmSolution> {
    check_sizes(n, k, dim)?;
    let (nf, kf) = (n as f64, k as f64);
    let big_n = k * n;
    let active = (nf * (kf - 1.0) / kf).sqrt() > kf * nf * reg.lambda();
    let a = if active {
        let inner = (1.0 / (nf * kf * (kf - 1.0) * reg.lambda_h * reg.lambda_w)).sqrt() - 1.0;
        ((kf - 1.0) * inner).ln().max(0.0)
    } else {
        0.0
    };
    if a == 0.0 {
        let w = DMatrix::zeros(dim, k);
        let h = DMatrix::zeros(dim, big_n);
        let objective = objective(LossKind::CrossEntropy, &w, &h, k, n, reg);
        return Ok(UpfmSolution { a: 0.0, b: 0.0, w, h, loss: LossKind::CrossEntropy, objective, k, n });
    }
    let b = ((kf - 1.0) / (nf * kf) * reg.lambda_w / reg.lambda_h).sqrt() * a;
    let y = label_matrix(k, n)?;
    let c = centering_matrix(k);
    let mut h = DMatrix::zeros(dim, big_n);
    h.rows_mut(0, k).copy_from(&(y * b.sqrt()));
    let mut w = DMatrix::zeros(dim, k);
    w.rows_mut(0, k).copy_from(&(c * (a / b.sqrt())));
    let objective = objective(LossKind::CrossEntropy, &w, &h, k, n, reg);
    Ok(UpfmSolution { a, b, w, h, loss: LossKind::CrossEntropy, objective, k, n })
}

/// Objective value of the cross-entropy closed form written in `(a, b)`.
pub fn ce_objective_formula(n: usize, k: usize, reg: &RegularizationParams, a: f64, b: f64) -> f64 {
    let (nf, kf) = (n as f64, k as f64);
    if a == 0.0 {
        return kf.ln();
    }
    (1.0 + (kf - 1.0) * (-a).exp()).ln() + reg.lambda_w * a * a * (kf - 1.0) / (2.0 * b) + reg.lambda_h * b * nf * kf / 2.0
}

/// Closed-form global minimizer for the squared loss. The shrinkage factor
/// `(1 - sqrt(n) K λ)₊` is stored in `a`; `b` holds the squared norm of a
/// class-mean feature.
pub fn l2_closed_form(n: usize, k: usize, reg: &RegularizationParams, dim: usize) -> Result<UpfmSolution> {
    check_sizes(n, k, dim)?;
    let (nf, kf) = (n as f64, k as f64);
    let shrink = (1.0 - nf.sqrt() * kf * reg.lambda()).max(0.0);
    let big_n = k * n;
    let mut h = DMatrix::zeros(dim, big_n);
    let mut w = DMatrix::zeros(dim, k);
    let mut b = 0.0;
    if shrink > 0.0 {
        let scale = (reg.lambda_w / (nf * reg.lambda_h)).powf(0.25) * shrink.sqrt();
        let y = label_matrix(k, n)?;
        h.rows_mut(0, k).copy_from(&(y * scale));
        let wscale = (nf * reg.lambda_h / reg.lambda_w).sqrt() * scale;
        for j in 0..k {
            w[(j, j)] = wscale;
        }
        b = scale * scale;
    }
    let objective = objective(LossKind::SquaredError, &w, &h, k, n, reg);
    Ok(UpfmSolution { a: shrink, b, w, h, loss: LossKind::SquaredError, objective, k, n })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NumericMin {
    pub w: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub objective: f64,
    /// Whether the best restart met the projected-gradient tolerance.
    pub converged: bool,
}

/// Projected gradient on `(W, H)`, `H >= 0`, from 5 random starts.
///
/// Steps start at 1e-2 and then follow Barzilai-Borwein lengths, with
/// nonmonotone backtracking by halving. A run stops when the projected
/// gradient norm drops below 1e-8 or after `iters` iterations.
pub fn numeric_minimize(
    loss: LossKind,
    n: usize,
    k: usize,
    dim: usize,
    reg: &RegularizationParams,
    stream: RngStream,
    iters: usize,
) -> Result<NumericMin> {
    check_sizes(n, k, dim)?;
    let y = label_matrix(k, n)?;
    let runs: Vec<Result<NumericMin>> = (0..5u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream.child(r).generator();
            let scale = 0.5 / (1.0 + r as f64);
            let w0 = gaussian_matrix(dim, k, &mut rng) * scale;
            let h0 = gaussian_matrix(dim, k * n, &mut rng).map(|v| v.abs() * scale);
            spg(loss, w0, h0, &y, reg, iters)
        })
        .collect();
    let mut best: Option<NumericMin> = None;
    for run in runs {
        let run = run?;
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    Ok(best.expect("five restarts"))
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn spg(
    loss: LossKind,
    mut w: DMatrix<f64>,
    mut h: DMatrix<f64>,
    y: &DMatrix<f64>,
    reg: &RegularizationParams,
    iters: usize,
) -> Result<NumericMin> {
    const MEMORY: usize = 10;
    let (mut f, mut gw, mut gh) = objective_and_grad(loss, &w, &h, y, reg);
    let mut history = std::collections::VecDeque::from([f]);
    let mut alpha = 1e-2;
    let mut best = (f, w.clone(), h.clone());
    let mut converged = false;
    for _ in 0..iters {
        let pg_h = (&h - &gh).map(|v| v.max(0.0)) - &h;
        let pg_norm = (gw.norm_squared() + pg_h.norm_squared()).sqrt();
        if pg_norm < 1e-8 {
            converged = true;
            break;
        }
        let dw = &gw * -alpha;
        let dh = (&h - &gh * alpha).map(|v| v.max(0.0)) - &h;
        let slope = inner(&gw, &dw) + inner(&gh, &dh);
        let fmax = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut lam = 1.0;
        let (f_new, w_new, h_new) = loop {
            let wt = &w + &dw * lam;
            let ht = &h + &dh * lam;
            let ft = objective_value(loss, &wt, &ht, y, reg);
            if !ft.is_finite() && lam < 1e-30 {
                return Err(NcError::Numerical("objective diverged in projected gradient".into()));
            }
            if ft <= fmax + 1e-4 * lam * slope || lam < 1e-20 {
                break (ft, wt, ht);
            }
            lam *= 0.5;
        };
        let (_, gw_new, gh_new) = objective_and_grad(loss, &w_new, &h_new, y, reg);
        let sw = &w_new - &w;
        let sh = &h_new - &h;
        let ss = sw.norm_squared() + sh.norm_squared();
        let sy = inner(&sw, &(&gw_new - &gw)) + inner(&sh, &(&gh_new - &gh));
        alpha = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e6) } else { 1e6 };
        if ss == 0.0 {
            converged = true;
            break;
        }
        w = w_new;
        h = h_new;
        f = f_new;
        gw = gw_new;
        gh = gh_new;
        if !f.is_finite() {
            return Err(NcError::Numerical("objective became NaN".into()));
        }
        if f < best.0 {
            best = (f, w.clone(), h.clone());
        }
        history.push_back(f);
        if history.len() > MEMORY {
            history.pop_front();
        }
    }
    Ok(NumericMin { objective: best.0, w: best.1, h: best.2, converged })
}

fn objective_value(loss: LossKind, w: &DMatrix<f64>, h: &DMatrix<f64>, y: &DMatrix<f64>, reg: &RegularizationParams) -> f64 {
    let z = w.transpose() * h;
    mean_loss(loss, &z, y) + 0.5 * reg.lambda_w * w.norm_squared() + 0.5 * reg.lambda_h * h.norm_squared()
}

/// Dual certificate for the convex relaxation of the cross-entropy problem.
#[derive(Debug, Clone, PartialEq)]
pub struct KktCertificate {
    /// (K+N)×(K+N) dual matrix.
    pub s: DMatrix<f64>,
    /// N×N multiplier of the nonnegativity constraint on `HᵀH`.
    pub b: DMatrix<f64>,
    pub t: f64,
    /// Smallest eigenvalue of `S`.
    pub psd_min_eig: f64,
    /// `‖S Q‖_F` with `Q` the Gram matrix of `[W, H]`.
    pub sq_norm: f64,
    /// `‖S Q‖_F / (‖S‖₂ ‖Q‖₂)` with spectral norms.
    pub sq_relative: f64,
    /// `⟨B, HᵀH⟩`.
    pub bv_inner: f64,
}

/// Build the dual certificate at the solution's `a` and evaluate residuals
/// against the solution's factors.
pub fn kkt_check_ce(sol: &UpfmSolution, reg: &RegularizationParams) -> Result<KktCertificate> {
    if sol.loss != LossKind::CrossEntropy {
        return Err(NcError::NotApplicable("certificate is for the cross-entropy loss".into()));
    }
    if sol.a <= 0.0 {
        return Err(NcError::NotApplicable("zero solution has no collapse certificate".into()));
    }
    let (k, n) = (sol.k, sol.n);
    let big_n = k * n;
    let (kf, nf) = (k as f64, n as f64);
    let kappa = kf / (big_n as f64 * (kf - 1.0 + sol.a.exp()));
    let t = reg.lambda_h / (nf * (kf - 1.0));
    let b = DMatrix::from_fn(big_n, big_n, |i, j| if i / n != j / n { t } else { 0.0 });
    let cy = centering_matrix(k) * label_matrix(k, n)?;
    let dim = k + big_n;
    let mut s = DMatrix::zeros(dim, dim);
    for i in 0..k {
        s[(i, i)] = 0.5 * reg.lambda_w;
    }
    s.view_mut((0, k), (k, big_n)).copy_from(&(&cy * (-0.5 * kappa)));
    s.view_mut((k, 0), (big_n, k)).copy_from(&(cy.transpose() * (-0.5 * kappa)));
    let lower = (DMatrix::identity(big_n, big_n) * reg.lambda_h - &b) * 0.5;
    s.view_mut((k, k), (big_n, big_n)).copy_from(&lower);

    let (w, h) = (&sol.w, &sol.h);
    let mut q = DMatrix::zeros(dim, dim);
    q.view_mut((0, 0), (k, k)).copy_from(&(w.transpose() * w));
    let z = w.transpose() * h;
    q.view_mut((0, k), (k, big_n)).copy_from(&z);
    q.view_mut((k, 0), (big_n, k)).copy_from(&z.transpose());
    let v = h.transpose() * h;
    q.view_mut((k, k), (big_n, big_n)).copy_from(&v);

    let sq_norm = (&s * &q).norm();
    let eig = sym_eigenvalues(&s);
    let psd_min_eig = eig[0];
    let s_op = eig[0].abs().max(eig[dim - 1].abs());
    let mut factors = DMatrix::zeros(w.nrows(), dim);
    factors.columns_mut(0, k).copy_from(w);
    factors.columns_mut(k, big_n).copy_from(h);
    let q_op = op_norm(&factors).powi(2);
    let denom = s_op * q_op;
    let sq_relative = if denom > 0.0 { sq_norm / denom } else { 0.0 };
    let bv_inner = inner(&b, &v);
    Ok(KktCertificate { s, b, t, psd_min_eig, sq_norm, sq_relative, bv_inner })
}

/// `λ_H I_N - (λ_H / n) (I_K ⊗ J_n)`, the Schur complement of the certificate.
pub fn schur_complement(n: usize, k: usize, lambda_h: f64) -> DMatrix<f64> {
    let big_n = n * k;
    DMatrix::from_fn(big_n, big_n, |i, j| {
        let diag = if i == j { lambda_h } else { 0.0 };
        let blk = if i / n == j / n { lambda_h / n as f64 } else { 0.0 };
        diag - blk
    })
}

/// Class-mean features of a solution, D×K.
pub fn mean_features(sol: &UpfmSolution) -> DMatrix<f64> {
    crate::data::class_means(&sol.h, sol.k, sol.n).expect("solution sizes are consistent")
}

/// Minimizer of `(1/2N)‖Z - Y‖² + λ‖Z‖_*` by singular value soft-thresholding.
pub fn nuclear_prox_oracle(n: usize, k: usize, lambda: f64) -> DMatrix<f64> {
    let y = label_matrix(k, n).expect("valid sizes");
    let big_n = (k * n) as f64;
    let svd = y.svd(true, true);
    let u = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    let shrunk = DVector::from_iterator(svd.singular_values.len(), svd.singular_values.iter().map(|s| (s - big_n * lambda).max(0.0)));
    u * DMatrix::from_diagonal(&shrunk) * vt
}
