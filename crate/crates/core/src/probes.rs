//! Monte Carlo checks of the concentration facts behind the feasibility
//! and generalization results: random projections of angles and singular
//! values, the Gaussian min-max lower bound over the nonnegative orthant,
//! and its Lipschitz concentration.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{invalid, NcError, Result};
use crate::linalg::{gaussian_matrix, gaussian_vector, random_orthonormal, singular_values, sym_eigenvalues};
use crate::rng::RngStream;
use crate::stats::{binomial_std_error, expected_gaussian_norm};

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub name: String,
    pub trials: usize,
    pub violations: usize,
    /// Inputs and derived quantities (thresholds, sample means).
    pub values: BTreeMap<String, f64>,
    pub empirical_rate: f64,
    /// One standard error of `empirical_rate`.
    pub ci: f64,
    /// Theoretical failure probability, `None` when it carries an unknown constant.
    pub theoretical_rate_bound: Option<f64>,
    /// Trials where an inner solver did not reach tolerance.
    pub solver_failures: usize,
}

impl ProbeReport {
    fn new(name: &str, trials: usize, violations: usize, values: BTreeMap<String, f64>, bound: Option<f64>) -> Self {
        let rate = if trials == 0 { 0.0 } else { violations as f64 / trials as f64 };
        Self {
            name: name.to_string(),
            trials,
            violations,
            values,
            empirical_rate: rate,
            ci: binomial_std_error(rate, trials),
            theoretical_rate_bound: bound,
            solver_failures: 0,
        }
    }
}

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn random_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = gaussian_vector(d, rng);
        let n = v.norm();
        if n > 0.0 {
            return v / n;
        }
    }
}

/// Angle-distortion bound `4ε/(1-ε)²`.
pub fn jl_angle_bound(epsilon: f64) -> f64 {
    4.0 * epsilon / (1.0 - epsilon).powi(2)
}

/// `|cos θ̃ - cos θ|` for the pair after projecting onto the columns of `phi`.
pub fn projected_cosine_gap(v1: &DVector<f64>, v2: &DVector<f64>, phi: &DMatrix<f64>) -> f64 {
    let cos = v1.dot(v2) / (v1.norm() * v2.norm());
    let (p1, p2) = (phi.transpose() * v1, phi.transpose() * v2);
    let cos_p = p1.dot(&p2) / (p1.norm() * p2.norm());
    (cos_p.clamp(-1.0, 1.0) - cos.clamp(-1.0, 1.0)).abs()
}

fn coordinate_cosine_gap(v1: &DVector<f64>, v2: &DVector<f64>, m: usize) -> f64 {
    let cos = v1.dot(v2) / (v1.norm() * v2.norm());
    let (p1, p2) = (v1.rows(0, m), v2.rows(0, m));
    let cos_p = p1.dot(&p2) / (p1.norm() * p2.norm());
    (cos_p.clamp(-1.0, 1.0) - cos.clamp(-1.0, 1.0)).abs()
}

fn check_projection(d: usize, m: usize, epsilon: f64) -> Result<()> {
    if m == 0 || m > d {
        return invalid(format!("need 1 <= m <= d, got m = {m}, d = {d}"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return invalid("epsilon must lie in (0, 1)");
    }
    Ok(())
}

/// Random unit pairs projected onto random m-dimensional subspaces. The
/// pair is uniform and independent of the subspace, so projecting onto the
/// first m coordinates has the same law and avoids a QR per trial.
pub fn jl_angle_probe(d: usize, m: usize, epsilon: f64, trials: usize, stream: RngStream) -> Result<ProbeReport> {
    check_projection(d, m, epsilon)?;
    let bound = jl_angle_bound(epsilon);
    let outcomes: Vec<Result<bool>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream.child(t as u64).generator();
            let v1 = random_unit(d, &mut rng);
            let v2 = random_unit(d, &mut rng);
            Ok(coordinate_cosine_gap(&v1, &v2, m) > bound)
        })
        .collect();
    let violations = count_true(outcomes)?;
    Ok(ProbeReport::new(
        "jl_angle",
        trials,
        violations,
        params(&[("d", d as f64), ("m", m as f64), ("epsilon", epsilon), ("bound", bound)]),
        None,
    ))
}

fn count_true(outcomes: Vec<Result<bool>>) -> Result<usize> {
    let mut c = 0;
    for o in outcomes {
        if o? {
            c += 1;
        }
    }
    Ok(c)
}

/// Factors `√((m/d)(1 ± ε² ± 2Kε))` multiplying `σ_max` and `σ_min`; a
/// negative radicand gives 0.
pub fn jl_singular_factors(k: usize, d: usize, m: usize, epsilon: f64) -> (f64, f64) {
    let r = m as f64 / d as f64;
    let spread = epsilon * epsilon + 2.0 * k as f64 * epsilon;
    ((r * (1.0 + spread)).sqrt(), (r * (1.0 - spread)).max(0.0).sqrt())
}

/// Singular values of `Π Φ` against the scaled extremes of `Π` (K×d).
/// With `Π = U Σ Vᵀ`, `Vᵀ Φ` has the law of the transposed top m×K block of
/// a random d×K orthonormal frame, which is all a trial samples.
pub fn jl_singular_probe(pi: &DMatrix<f64>, m: usize, epsilon: f64, trials: usize, stream: RngStream) -> Result<ProbeReport> {
    let (k, d) = pi.shape();
    check_projection(d, m, epsilon)?;
    if k == 0 || k > m {
        return invalid(format!("need 1 <= K <= m, got K = {k}"));
    }
    let sv = singular_values(pi);
    let (smax, smin) = (sv[0], sv[k - 1]);
    if !(smin > smax * crate::linalg::default_rank_tol(k, d)) {
        return invalid("projected matrix must have full row rank");
    }
    let (fu, fl) = jl_singular_factors(k, d, m, epsilon);
    let (upper, lower) = (fu * smax, fl * smin);
    let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(&sv[..k]));
    let outcomes: Vec<Result<bool>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream.child(t as u64).generator();
            let frame = random_orthonormal(d, k, &mut rng)?;
            let s = singular_values(&(&sigma * frame.rows(0, m).transpose()));
            Ok(s[0] > upper * (1.0 + 1e-12) || s[k - 1] < lower * (1.0 - 1e-12))
        })
        .collect();
    let violations = count_true(outcomes)?;
    Ok(ProbeReport::new(
        "jl_singular",
        trials,
        violations,
        params(&[
            ("k", k as f64),
            ("d", d as f64),
            ("m", m as f64),
            ("epsilon", epsilon),
            ("upper", upper),
            ("lower", lower),
        ]),
        None,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexSolution {
    pub s: DVector<f64>,
    /// `‖Zᵀs‖` at the returned point.
    pub value: f64,
    /// Frank-Wolfe gap of `‖Zᵀs‖²`.
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut u: Vec<f64> = v.iter().copied().collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        acc += ui;
        let t = (acc - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

/// `min ‖Zᵀs‖` over the probability simplex by accelerated projected
/// gradient on the Gram matrix; `zt` is d×n. Stops when the Frank-Wolfe gap
/// of the squared objective is at most `tol`.
pub fn simplex_min_norm(zt: &DMatrix<f64>, tol: f64, max_iter: usize) -> SimplexSolution {
    let n = zt.ncols();
    let q = zt.transpose() * zt;
    let lmax = sym_eigenvalues(&q).last().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let step = 1.0 / (2.0 * lmax);
    let grad = |s: &DVector<f64>| &q * s * 2.0;
    let gap_of = |s: &DVector<f64>| {
        let g = grad(s);
        g.dot(s) - g.min()
    };
    let objective = |s: &DVector<f64>| s.dot(&(&q * s));
    let mut s = DVector::from_element(n, 1.0 / n as f64);
    let mut y = s.clone();
    let mut t = 1.0f64;
    let mut gap = gap_of(&s);
    let mut it = 0;
    while it < max_iter && gap > tol {
        let next = project_simplex(&(&y - grad(&y) * step));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if objective(&next) > objective(&s) {
            // Restart momentum with a plain projected step.
            s = project_simplex(&(&s - grad(&s) * step));
            y = s.clone();
            t = 1.0;
        } else {
            y = &next + (&next - &s) * ((t - 1.0) / t_next);
            s = next;
            t = t_next;
        }
        it += 1;
        if it % 50 == 0 {
            if let Some(p) = polish_on_support(&q, &s) {
                if objective(&p) <= objective(&s) {
                    s = p;
                    y = s.clone();
                    t = 1.0;
                }
            }
        }
        gap = gap_of(&s);
    }
    let value = s.dot(&(&q * &s)).max(0.0).sqrt();
    SimplexSolution { s, value, gap, iterations: it, converged: gap <= tol }
}

/// Exact minimizer on the current support: `Q_SS s = λ1`, `1ᵀs = 1`.
/// `None` when the solve fails or leaves the orthant.
fn polish_on_support(q: &DMatrix<f64>, s: &DVector<f64>) -> Option<DVector<f64>> {
    let support: Vec<usize> = (0..s.len()).filter(|&i| s[i] > 0.0).collect();
    let qs = DMatrix::from_fn(support.len(), support.len(), |i, j| q[(support[i], support[j])]);
    let w = qs.cholesky()?.solve(&DVector::from_element(support.len(), 1.0));
    let total = w.sum();
    if !(total > 0.0) || w.iter().any(|v| *v < 0.0) {
        return None;
    }
    let mut out = DVector::zeros(s.len());
    for (i, &k) in support.iter().enumerate() {
        out[k] = w[i] / total;
    }
    Some(out)
}

/// Right-hand side `(E‖h‖_d - √(n/2) - √(2 log n))/√n` of the simplex
/// minimum chain for an n×d Gaussian matrix.
pub fn gordon_chain_rhs(n: usize, d: usize) -> f64 {
    let nf = n as f64;
    (expected_gaussian_norm(d) - (nf / 2.0).sqrt() - (2.0 * nf.ln()).sqrt()) / nf.sqrt()
}

pub const SIMPLEX_TOL: f64 = 1e-6;
const SIMPLEX_MAX_ITER: usize = 200_000;

/// Per trial: Gaussian `Z` (n×d), simplex minimum of `‖Zᵀs‖`, compared
/// with [`gordon_chain_rhs`]. A violation is a trial below the right-hand side.
pub fn gordon_probe(n: usize, d: usize, trials: usize, stream: RngStream) -> Result<ProbeReport> {
    if n == 0 || d <= n {
        return invalid(format!("need d > n >= 1, got n = {n}, d = {d}"));
    }
    let rhs = gordon_chain_rhs(n, d);
    let sols: Vec<SimplexSolution> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream.child(t as u64).generator();
            let zt = gaussian_matrix(d, n, &mut rng);
            simplex_min_norm(&zt, SIMPLEX_TOL, SIMPLEX_MAX_ITER)
        })
        .collect();
    let violations = sols.iter().filter(|s| s.value < rhs).count();
    let mean = sols.iter().map(|s| s.value).sum::<f64>() / trials.max(1) as f64;
    let mut rep = ProbeReport::new(
        "gordon",
        trials,
        violations,
        params(&[("n", n as f64), ("d", d as f64), ("rhs", rhs), ("mean_simplex_min", mean)]),
        Some(1.0 / n as f64),
    );
    rep.solver_failures = sols.iter().filter(|s| !s.converged).count();
    Ok(rep)
}

/// Sample mean of `‖g₊‖` for `g ~ N(0, I_n)`, with the bound `√(n/2)`.
pub fn positive_part_norm_mean(n: usize, draws: usize, stream: RngStream) -> (f64, f64) {
    let mut rng = stream.generator();
    let total: f64 = (0..draws)
        .map(|_| gaussian_vector(n, &mut rng).iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt())
        .sum();
    (total / draws.max(1) as f64, (n as f64 / 2.0).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzReport {
    pub mean: f64,
    pub std_dev: f64,
    /// One report per threshold t; violations count `|f - mean| >= t`.
    pub tails: Vec<ProbeReport>,
    pub solver_failures: usize,
}

/// Tail check of `f(Z) = ‖Zᵀs*‖/‖s*‖₂` with `s*` the simplex minimizer,
/// against `2 exp(-t²/2)`.
pub fn lipschitz_concentration_probe(
    n: usize,
    d: usize,
    trials: usize,
    thresholds: &[f64],
    stream: RngStream,
) -> Result<LipschitzReport> {
    if n == 0 || d <= n {
        return invalid(format!("need d > n >= 1, got n = {n}, d = {d}"));
    }
    if trials < 2 {
        return invalid("need at least two trials");
    }
    if thresholds.iter().any(|t| !(*t >= 0.0)) {
        return invalid("thresholds must be nonnegative");
    }
    let sols: Vec<(f64, bool)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream.child(t as u64).generator();
            let zt = gaussian_matrix(d, n, &mut rng);
            let sol = simplex_min_norm(&zt, SIMPLEX_TOL, SIMPLEX_MAX_ITER);
            (sol.value / sol.s.norm(), sol.converged)
        })
        .collect();
    let values: Vec<f64> = sols.iter().map(|s| s.0).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(NcError::Numerical("non-finite probe statistic".into()));
    }
    let mean = values.iter().sum::<f64>() / trials as f64;
    let std_dev = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt();
    let solver_failures = sols.iter().filter(|s| !s.1).count();
    let tails = thresholds
        .iter()
        .map(|&t| {
            let violations = values.iter().filter(|v| (*v - mean).abs() >= t).count();
            let bound = 2.0 * (-t * t / 2.0).exp();
            let mut rep = ProbeReport::new(
                "lipschitz_tail",
                trials,
                violations,
                params(&[("n", n as f64), ("d", d as f64), ("t", t), ("bound", bound), ("mean", mean)]),
                Some(bound),
            );
            rep.solver_failures = solver_failures;
            rep
        })
        .collect();
    Ok(LipschitzReport { mean, std_dev, tails, solver_failures })
}
