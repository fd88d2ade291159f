//! Two-neuron classifiers under feature collapse on a two-cluster mixture:
//! best achievable margins over the collapse-constrained neuron sets,
//! closed-form error bounds and Monte Carlo test error.
//!
//! Class `k`'s neuron set holds the β with `X_kᵀβ = 1` and `X_{k'}ᵀβ <= 0`;
//! its margin is `⟨m_k, β⟩/‖β‖` where `m_k` is the class mean.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::data::{GmmSpec, LabeledDataset};
use crate::error::{invalid, mismatch, NcError, Result};
use crate::feasibility::lemma_min;
use crate::linalg::{null_space_basis, op_norm, sym_eigenvalues, Reflector};
use crate::rng::{normal, RngStream};
use crate::stats::normal_cdf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginRegime {
    LowNoiseConstruction,
    MinNormWide,
}

impl MarginRegime {
    pub fn name(self) -> &'static str {
        match self {
            Self::LowNoiseConstruction => "low_noise_construction",
            Self::MinNormWide => "min_norm_d_ge_2n",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginReport {
    pub class: usize,
    pub f_star: f64,
    pub beta_star: DVector<f64>,
    pub regime: MarginRegime,
    /// `Φ(-f*/σ)`: single-neuron error of `beta_star`; 0 when σ = 0.
    pub upper_error: f64,
    /// `Φ(-‖m‖/σ)`: no linear neuron does better.
    pub lower_error: f64,
    /// The supremum is approached but not attained; `beta_star` is a far
    /// point along the maximizing ray.
    pub branch_degraded: bool,
    /// `X_{k'}ᵀβ* <= tol` held on the sample.
    pub inequality_holds: bool,
    /// `max |X_kᵀβ* - 1|`.
    pub eq_residual: f64,
    /// `max(X_{k'}ᵀβ*, 0)`.
    pub ineq_violation: f64,
}

fn check_two_class(data: &LabeledDataset, spec: &GmmSpec, class: usize) -> Result<()> {
    if data.classes() != 2 || spec.classes() != 2 {
        return invalid("margin analysis needs exactly two classes");
    }
    if class > 1 {
        return invalid(format!("class must be 0 or 1, got {class}"));
    }
    if data.dim() != spec.dim() || data.per_class() != spec.n {
        return mismatch("dataset does not match the mixture");
    }
    Ok(())
}

/// `(max |X_kᵀβ - 1|, max(X_{k'}ᵀβ, 0))`.
pub fn membership_residuals(data: &LabeledDataset, class: usize, beta: &DVector<f64>) -> (f64, f64) {
    let own = data.block(class).transpose() * beta;
    let other = data.block(1 - class).transpose() * beta;
    let eq = own.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    let ineq = other.iter().copied().fold(0.0, f64::max);
    (eq, ineq)
}

fn report(
    data: &LabeledDataset,
    spec: &GmmSpec,
    class: usize,
    beta: DVector<f64>,
    regime: MarginRegime,
    branch_degraded: bool,
    tol: f64,
) -> MarginReport {
    let m = spec.mean(class);
    let f_star = m.dot(&beta) / beta.norm();
    let (eq_residual, ineq_violation) = membership_residuals(data, class, &beta);
    let sigma = spec.sigma;
    let (upper_error, lower_error) =
        if sigma == 0.0 { (0.0, 0.0) } else { (normal_cdf(-f_star / sigma), normal_cdf(-m.norm() / sigma)) };
    MarginReport {
        class,
        f_star,
        beta_star: beta,
        regime,
        upper_error,
        lower_error,
        branch_degraded,
        inequality_holds: ineq_violation <= tol,
        eq_residual,
        ineq_violation,
    }
}

/// Maximize the margin over the equality constraints alone by the
/// null-space construction, then check the dropped inequalities.
pub fn margin_low_noise(data: &LabeledDataset, spec: &GmmSpec, class: usize, tol: f64) -> Result<MarginReport> {
    check_two_class(data, spec, class)?;
    let n = data.per_class();
    let d = data.dim();
    if d < n {
        return invalid(format!("need d >= n, got d = {d}, n = {n}"));
    }
    let m = spec.mean(class);
    let own_t = data.block(class).transpose();
    let mu_hat = own_t.row_mean().transpose();
    // Centered rows of X_kᵀ: the part of the sample noise that β must kill.
    let mut noise = own_t.clone();
    for mut r in noise.row_iter_mut() {
        r -= mu_hat.transpose();
    }
    let scale = op_norm(&own_t).max(f64::MIN_POSITIVE);
    let phi = if op_norm(&noise) <= 1e-12 * scale { DMatrix::identity(d, d) } else { null_space_basis(&noise, 1e-10) };
    let proj_hat = phi.transpose() * &mu_hat;
    let ph2 = proj_hat.norm_squared();
    if ph2 == 0.0 || phi.ncols() == 0 {
        return Err(NcError::Numerical("projected sample mean vanishes".into()));
    }
    let v1 = &proj_hat / ph2;
    let v2 = -(phi.transpose() * &m);
    let lm = lemma_min(&v1, &v2)?;
    let beta = &phi * (v1 + lm.argmin);
    Ok(report(data, spec, class, beta, MarginRegime::LowNoiseConstruction, !lm.attained, tol))
}

/// Minimum-norm margin problem for one class, with μ rotated onto the first
/// axis. Requires antipodal means, σ > 0 and `d - 1 >= 2n`.
#[derive(Debug, Clone)]
pub struct MinNormProblem {
    class: usize,
    n: usize,
    d: usize,
    sigma: f64,
    mean_norm: f64,
    rotation: Reflector,
    /// Rotated noise along the mean direction, own block then other block.
    z_first: DVector<f64>,
    /// Remaining rotated noise columns, 2n×(d-1).
    z_rest: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    gram_max_eig: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinNormOptimum {
    pub f_star: f64,
    /// `None` when the optimum sits at c = ∞.
    pub c: Option<f64>,
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
    pub attained: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GMin {
    pub value: f64,
    /// Minimizing c, `None` for c = ∞.
    pub c: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainCheck {
    pub f_star: f64,
    pub bound: f64,
    pub gram_max_eig: f64,
    /// The chain is only implied when `λ_max(Z Zᵀ) <= 2d`.
    pub applicable: bool,
    pub holds: bool,
}

impl MinNormProblem {
    pub fn new(data: &LabeledDataset, spec: &GmmSpec, class: usize) -> Result<Self> {
        check_two_class(data, spec, class)?;
        let (n, d, sigma) = (data.per_class(), data.dim(), spec.sigma);
        if !(sigma > 0.0) {
            return invalid("minimum-norm analysis needs sigma > 0");
        }
        if d < 2 * n + 1 {
            return Err(NcError::NotApplicable(format!("need d - 1 >= 2n, got d = {d}, n = {n}")));
        }
        let m = spec.mean(class);
        let other_mean = spec.mean(1 - class);
        let mean_norm = m.norm();
        if mean_norm == 0.0 || (&m + &other_mean).norm() > 1e-12 * mean_norm {
            return invalid("minimum-norm analysis needs antipodal nonzero means");
        }
        // Zᵀ columns: (x - m_k)/σ for own samples, (x + m_k)/σ for the others.
        let mut zt = DMatrix::zeros(d, 2 * n);
        let own = data.block(class);
        let other = data.block(1 - class);
        for i in 0..n {
            zt.set_column(i, &((own.column(i) - &m) / sigma));
            zt.set_column(n + i, &((other.column(i) + &m) / sigma));
        }
        let rotation = Reflector::to_first_axis(&m);
        let zt = rotation.apply_columns(&zt);
        let z_first = zt.row(0).transpose();
        let z_rest = zt.rows(1, d - 1).transpose();
        let gram = &z_rest * z_rest.transpose();
        let gram_max_eig = sym_eigenvalues(&gram).last().copied().unwrap_or(0.0);
        let chol = Cholesky::new(gram).ok_or_else(|| NcError::Numerical("noise Gram matrix is singular".into()))?;
        Ok(Self { class, n, d, sigma, mean_norm, rotation, z_first, z_rest, chol, gram_max_eig })
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn gram_max_eigenvalue(&self) -> f64 {
        self.gram_max_eig
    }

    /// β/c for `u = 1/c`, `g = γ/c`, in original coordinates.
    fn scaled_beta(&self, u: f64, g: &DVector<f64>) -> DVector<f64> {
        let r = self.scaled_rhs(u, g);
        let rest = self.z_rest.transpose() * self.chol.solve(&r);
        let mut bt = DVector::zeros(self.d);
        bt[0] = 1.0 / self.mean_norm;
        bt.rows_mut(1, self.d - 1).copy_from(&rest);
        self.rotation.apply(&bt)
    }

    fn scaled_rhs(&self, u: f64, g: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        DVector::from_fn(2 * n, |i, _| {
            let pinned = if i < n { (u - 1.0) / self.sigma } else { (1.0 - g[i - n]) / self.sigma };
            pinned - self.z_first[i] / self.mean_norm
        })
    }

    /// `F(c, γ)` and its minimum-norm β.
    pub fn evaluate(&self, c: f64, gamma: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        if !(c > 0.0) || !c.is_finite() {
            return invalid("c must be positive and finite");
        }
        if gamma.len() != self.n {
            return mismatch(format!("gamma has length {}, expected {}", gamma.len(), self.n));
        }
        if gamma.iter().any(|v| *v < 0.0) {
            return invalid("gamma must be nonnegative");
        }
        let beta = self.scaled_beta(1.0 / c, &(gamma / c)) * c;
        Ok((c / beta.norm(), beta))
    }

    /// Exact `sup F` over c > 0, γ >= 0. In `x = (1/c, γ/c) >= 0` the
    /// problem is `min ‖L⁻¹(E x + f)‖²` with `L Lᵀ` the noise Gram, a
    /// nonnegative least-squares problem.
    pub fn maximize(&self) -> Result<MinNormOptimum> {
        let n = self.n;
        let mut e = DMatrix::zeros(2 * n, n + 1);
        for i in 0..n {
            e[(i, 0)] = 1.0 / self.sigma;
            e[(n + i, i + 1)] = -1.0 / self.sigma;
        }
        let f = self.scaled_rhs(0.0, &DVector::zeros(n));
        let l = self.chol.l();
        let a = l.solve_lower_triangular(&e).ok_or_else(|| NcError::Numerical("triangular solve failed".into()))?;
        let b = -l.solve_lower_triangular(&f).ok_or_else(|| NcError::Numerical("triangular solve failed".into()))?;
        let x = nnls(&a, &b)?;
        let u = x[0];
        let g = x.rows(1, n).into_owned();
        let scaled = self.scaled_beta(u, &g);
        let f_star = 1.0 / scaled.norm();
        let attained = u > 0.0;
        // At c = ∞ report a far point on the limiting ray.
        let c = if attained { 1.0 / u } else { 1e9 };
        Ok(MinNormOptimum {
            f_star,
            c: attained.then_some(c),
            gamma: &g * c,
            beta: scaled * c,
            attained,
        })
    }

    /// Surrogate `G(c, γ)` of the bound chain, i.e. `‖r/c‖²` without the
    /// inverse Gram.
    pub fn g_value(&self, c: f64, gamma: &DVector<f64>) -> f64 {
        self.scaled_rhs(1.0 / c, &(gamma / c)).norm_squared()
    }

    /// Closed-form `min G` over c > 0, γ >= 0.
    pub fn min_g(&self) -> GMin {
        let n = self.n;
        let s = self.sigma / self.mean_norm;
        let own = self.z_first.rows(0, n);
        let other = self.z_first.rows(n, n);
        let tail: f64 = other.iter().map(|z| (s * z - 1.0).max(0.0).powi(2)).sum::<f64>() / self.sigma.powi(2);
        // In u = 1/c the first block is ‖u·1 - a‖²/σ² with a = 1 + s z_own.
        let a_mean = 1.0 + s * own.mean();
        if a_mean > 0.0 {
            let centered: f64 = own.iter().map(|z| (z - own.mean()).powi(2)).sum();
            GMin { value: centered / self.mean_norm.powi(2) + tail, c: Some(1.0 / a_mean) }
        } else {
            let full: f64 = own.iter().map(|z| (1.0 + s * z).powi(2)).sum();
            GMin { value: full / self.sigma.powi(2) + tail, c: None }
        }
    }

    /// `F* <= (min G/(2d) + 1/‖μ‖²)^{-1/2}`, implied when `λ_max(Z Zᵀ) <= 2d`.
    pub fn bound_chain(&self) -> Result<ChainCheck> {
        let opt = self.maximize()?;
        let bound = (self.min_g().value / (2.0 * self.d as f64) + self.mean_norm.powi(-2)).powf(-0.5);
        let applicable = self.gram_max_eig <= 2.0 * self.d as f64;
        Ok(ChainCheck {
            f_star: opt.f_star,
            bound,
            gram_max_eig: self.gram_max_eig,
            applicable,
            holds: opt.f_star <= bound * (1.0 + 1e-12),
        })
    }
}

/// `F(c, γ)` for class `class`.
pub fn margin_min_norm(data: &LabeledDataset, spec: &GmmSpec, class: usize, c: f64, gamma: &DVector<f64>) -> Result<f64> {
    Ok(MinNormProblem::new(data, spec, class)?.evaluate(c, gamma)?.0)
}

pub fn maximize_f(data: &LabeledDataset, spec: &GmmSpec, class: usize) -> Result<MinNormOptimum> {
    MinNormProblem::new(data, spec, class)?.maximize()
}

/// Margin report for the exact constrained optimum in the wide regime.
pub fn margin_min_norm_report(data: &LabeledDataset, spec: &GmmSpec, class: usize, tol: f64) -> Result<MarginReport> {
    let opt = maximize_f(data, spec, class)?;
    Ok(report(data, spec, class, opt.beta, MarginRegime::MinNormWide, !opt.attained, tol))
}

/// Lawson-Hanson active-set solver for `min ‖A x - b‖, x >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, k) = a.shape();
    if b.len() != m {
        return mismatch("right-hand side length differs from row count");
    }
    let tol = 10.0 * f64::EPSILON * a.abs().column_sum().max() * m.max(k) as f64;
    let mut x = DVector::zeros(k);
    let mut passive = vec![false; k];
    let solve_passive = |passive: &[bool]| -> Result<DVector<f64>> {
        let idx: Vec<usize> = (0..k).filter(|&j| passive[j]).collect();
        let sub = a.select_columns(&idx);
        let sol = sub
            .svd(true, true)
            .solve(b, f64::EPSILON * m.max(k) as f64)
            .map_err(|e| NcError::Numerical(e.into()))?;
        let mut full = DVector::zeros(k);
        for (p, &j) in idx.iter().enumerate() {
            full[j] = sol[p];
        }
        Ok(full)
    };
    for _outer in 0..3 * k + 10 {
        let w = a.transpose() * (b - a * &x);
        let cand = (0..k).filter(|&j| !passive[j] && w[j] > tol).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = cand else { return Ok(x) };
        passive[j] = true;
        for _inner in 0..3 * k + 10 {
            let s = solve_passive(&passive)?;
            if (0..k).filter(|&i| passive[i]).all(|i| s[i] > 0.0) {
                x = s;
                break;
            }
            let mut alpha = f64::INFINITY;
            for i in (0..k).filter(|&i| passive[i] && s[i] <= 0.0) {
                alpha = alpha.min(x[i] / (x[i] - s[i]));
            }
            x += (s - &x) * alpha;
            for i in 0..k {
                if passive[i] && x[i] <= tol {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
        }
    }
    Err(NcError::Numerical("nonnegative least squares did not converge".into()))
}

/// `f(x) = relu(β₁ᵀx) - relu(β₂ᵀx)`; positive predicts class 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoNeuronClassifier {
    pub beta1: DVector<f64>,
    pub beta2: DVector<f64>,
}

impl TwoNeuronClassifier {
    pub fn new(beta1: DVector<f64>, beta2: DVector<f64>) -> Result<Self> {
        if beta1.len() != beta2.len() {
            return mismatch("neurons differ in dimension");
        }
        if beta1.iter().chain(beta2.iter()).any(|v| !v.is_finite()) {
            return invalid("neuron weights must be finite");
        }
        Ok(Self { beta1, beta2 })
    }

    pub fn from_reports(class0: &MarginReport, class1: &MarginReport) -> Result<Self> {
        Self::new(class0.beta_star.clone(), class1.beta_star.clone())
    }

    pub fn output(&self, x: &DVector<f64>) -> f64 {
        self.beta1.dot(x).max(0.0) - self.beta2.dot(x).max(0.0)
    }

    /// Worst membership residuals `(equality, inequality)` over both neurons.
    pub fn membership(&self, data: &LabeledDataset) -> (f64, f64) {
        let (e1, i1) = membership_residuals(data, 0, &self.beta1);
        let (e2, i2) = membership_residuals(data, 1, &self.beta2);
        (e1.max(e2), i1.max(i2))
    }
}

/// Bracket for the exact test error: the lower value is
/// `½[Φ(-⟨m₀,β₁⟩/(σ‖β₁‖)) + Φ(-⟨m₁,β₂⟩/(σ‖β₂‖))]` and the upper is twice it.
pub fn analytic_error_bounds(clf: &TwoNeuronClassifier, spec: &GmmSpec) -> Result<(f64, f64)> {
    if spec.classes() != 2 || spec.dim() != clf.beta1.len() {
        return mismatch("classifier does not match a two-class mixture");
    }
    let sigma = spec.sigma;
    let term = |m: DVector<f64>, b: &DVector<f64>| {
        let t = m.dot(b) / b.norm();
        if sigma == 0.0 {
            if t > 0.0 {
                0.0
            } else {
                1.0
            }
        } else {
            normal_cdf(-t / sigma)
        }
    };
    let lower = 0.5 * (term(spec.mean(0), &clf.beta1) + term(spec.mean(1), &clf.beta2));
    Ok((lower, (2.0 * lower).min(1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McError {
    pub error: f64,
    /// One standard error of the stratified estimate.
    pub ci: f64,
    pub trials: usize,
}

const MC_CHUNK: usize = 1 << 16;

fn stratified(errs: [usize; 2], counts: [usize; 2]) -> McError {
    let p = [errs[0] as f64 / counts[0] as f64, errs[1] as f64 / counts[1] as f64];
    let var = p[0] * (1.0 - p[0]) / counts[0] as f64 + p[1] * (1.0 - p[1]) / counts[1] as f64;
    McError { error: 0.5 * (p[0] + p[1]), ci: 0.5 * var.sqrt(), trials: counts[0] + counts[1] }
}

fn mc_setup(clf: &TwoNeuronClassifier, spec: &GmmSpec, trials: usize) -> Result<[usize; 2]> {
    if spec.classes() != 2 || spec.dim() != clf.beta1.len() {
        return mismatch("classifier does not match a two-class mixture");
    }
    if trials < 2 {
        return invalid("need at least two Monte Carlo trials");
    }
    Ok([trials.div_ceil(2), trials / 2])
}

/// Test error on fresh points `m_k + σz`, half per class. Ties count as
/// errors. Samples the exact bivariate law of `(β₁ᵀx, β₂ᵀx)`.
pub fn monte_carlo_error(clf: &TwoNeuronClassifier, spec: &GmmSpec, trials: usize, stream: RngStream) -> Result<McError> {
    let counts = mc_setup(clf, spec, trials)?;
    let (b1, b2) = (&clf.beta1, &clf.beta2);
    let s = spec.sigma;
    let (n1, n2) = (b1.norm(), b2.norm());
    if n1 == 0.0 || n2 == 0.0 {
        return invalid("neurons must be nonzero");
    }
    let l11 = s * n1;
    let l21 = s * b1.dot(b2) / n1;
    let l22 = s * (n2 * n2 - (b1.dot(b2) / n1).powi(2)).max(0.0).sqrt();
    let mut errs = [0usize; 2];
    for class in 0..2 {
        let m = spec.mean(class);
        let (c1, c2) = (b1.dot(&m), b2.dot(&m));
        let chunks = counts[class].div_ceil(MC_CHUNK);
        let class_stream = stream.child(class as u64);
        errs[class] = (0..chunks)
            .into_par_iter()
            .map(|ci| {
                let mut rng = class_stream.child(ci as u64).generator();
                let len = MC_CHUNK.min(counts[class] - ci * MC_CHUNK);
                let mut wrong = 0usize;
                for _ in 0..len {
                    let (g1, g2) = (normal(&mut rng), normal(&mut rng));
                    let p1 = c1 + l11 * g1;
                    let p2 = c2 + l21 * g1 + l22 * g2;
                    let f = p1.max(0.0) - p2.max(0.0);
                    if (class == 0 && f <= 0.0) || (class == 1 && f >= 0.0) {
                        wrong += 1;
                    }
                }
                wrong
            })
            .sum();
    }
    Ok(stratified(errs, counts))
}

/// Same estimate drawing full d-dimensional test points.
pub fn monte_carlo_error_direct(clf: &TwoNeuronClassifier, spec: &GmmSpec, trials: usize, stream: RngStream) -> Result<McError> {
    let counts = mc_setup(clf, spec, trials)?;
    let d = spec.dim();
    let mut errs = [0usize; 2];
    for class in 0..2 {
        let m = spec.mean(class);
        let chunks = counts[class].div_ceil(MC_CHUNK);
        let class_stream = stream.child(class as u64);
        errs[class] = (0..chunks)
            .into_par_iter()
            .map(|ci| {
                let mut rng = class_stream.child(ci as u64).generator();
                let len = MC_CHUNK.min(counts[class] - ci * MC_CHUNK);
                let mut wrong = 0usize;
                for _ in 0..len {
                    let x = DVector::from_fn(d, |r, _| m[r] + spec.sigma * normal(&mut rng));
                    let f = clf.output(&x);
                    if (class == 0 && f <= 0.0) || (class == 1 && f >= 0.0) {
                        wrong += 1;
                    }
                }
                wrong
            })
            .sum();
    }
    Ok(stratified(errs, counts))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormulaValue {
    pub value: f64,
    /// The bracketed quantity was nonpositive and 1/2 was returned.
    pub floored: bool,
}

/// Closed-form lower bound on the test error of any collapsed two-neuron
/// classifier in the wide regime, as a function of `s = σ/‖μ‖`.
pub fn error_lower_formula(s: f64, n: usize, d: usize, c1: f64, c2: f64) -> Result<FormulaValue> {
    if !(s >= 0.0) || !s.is_finite() {
        return invalid("s must be finite and nonnegative");
    }
    if n < 1 || d < 1 {
        return invalid("n and d must be positive");
    }
    let (nf, df) = (n as f64, d as f64);
    let tail = if s == 0.0 { 0.0 } else { s.powi(3) * (-0.5 / (s * s)).exp() / (2.0 * std::f64::consts::PI).sqrt() };
    let slack = (c1 * s * s + c2 * s) * (nf.ln() / nf).sqrt();
    let inner = nf / (2.0 * df) * (tail + s * s + 1.0 - slack) + s * s;
    if !(inner > 0.0) {
        return Ok(FormulaValue { value: 0.5, floored: true });
    }
    Ok(FormulaValue { value: normal_cdf(-inner.powf(-0.5)), floored: false })
}
