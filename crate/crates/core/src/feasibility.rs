//! Linear feasibility of neural collapse for a given dataset.
//!
//! Class `k` admits a collapsed neuron when some `β` satisfies
//! `X_kᵀβ = 1_n` and `X_jᵀβ <= 0` for every other class `j`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{sample_gmm, GmmSpec, LabeledDataset};
use crate::error::{invalid, NcError, Result};
use crate::linalg::{null_space_basis, singular_values};
use crate::lp::{find_feasible_point, LpOptions, LpOutcome, Relation};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassFeasibility {
    pub feasible: bool,
    pub beta: Option<DVector<f64>>,
    /// `‖X_kᵀβ - 1‖_∞`, NaN when no β.
    pub eq_residual: f64,
    /// `max(0, max_j X_jᵀβ)` over other classes, NaN when no β.
    pub max_ineq_violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityResult {
    pub per_class: Vec<ClassFeasibility>,
    pub overall: bool,
}

/// Residuals of a candidate β for class `k`, computed directly from the data.
pub fn certificate_residuals(x: &LabeledDataset, k: usize, beta: &DVector<f64>) -> (f64, f64) {
    let own = x.block(k).transpose() * beta;
    let eq = own.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    let other = x.others(k).transpose() * beta;
    let ineq = other.iter().copied().fold(0.0, f64::max);
    (eq, ineq)
}

fn check_class(x: &LabeledDataset, k: usize) -> Result<()> {
    if k >= x.classes() {
        return invalid(format!("class index {k} out of range for K={}", x.classes()));
    }
    Ok(())
}

fn solve_class(x: &LabeledDataset, k: usize, own_rel: Relation, tol: f64) -> Result<ClassFeasibility> {
    check_class(x, k)?;
    let own = x.block(k).transpose();
    let other = x.others(k).transpose();
    let (n_own, n_other, d) = (own.nrows(), other.nrows(), x.dim());
    let mut a = DMatrix::zeros(n_own + n_other, d);
    a.rows_mut(0, n_own).copy_from(&own);
    a.rows_mut(n_own, n_other).copy_from(&other);
    let mut rel = vec![own_rel; n_own];
    rel.extend(std::iter::repeat_n(Relation::Le, n_other));
    let mut b = DVector::zeros(n_own + n_other);
    b.rows_mut(0, n_own).fill(1.0);
    if let Some(c) = full_rank_certificate(&a, n_own, own_rel, tol) {
        return Ok(c);
    }
    let opts = LpOptions { feas_tol: tol.max(1e-12), ..LpOptions::default() };
    match find_feasible_point(&a, &rel, &b, &opts)? {
        LpOutcome::Feasible { x: beta, .. } => {
            let own_v = &own * &beta;
            let eq = match own_rel {
                Relation::Eq => own_v.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max),
                _ => own_v.iter().map(|v| (1.0 - v).max(0.0)).fold(0.0, f64::max),
            };
            let ineq = (&other * &beta).iter().copied().fold(0.0, f64::max);
            Ok(ClassFeasibility { feasible: true, beta: Some(beta), eq_residual: eq, max_ineq_violation: ineq })
        }
        LpOutcome::Infeasible { .. } => Ok(ClassFeasibility {
            feasible: false,
            beta: None,
            eq_residual: f64::NAN,
            max_ineq_violation: f64::NAN,
        }),
    }
}

/// With full row rank, `Aβ = (1, -1)` is solvable outright and the LP is skipped.
/// Returns `None` when the rows are dependent or the solve misses the target.
fn full_rank_certificate(a: &DMatrix<f64>, n_own: usize, own_rel: Relation, tol: f64) -> Option<ClassFeasibility> {
    let (rows, cols) = a.shape();
    if rows > cols {
        return None;
    }
    let svd = a.clone().svd(true, true);
    let (lo, hi) = svd.singular_values.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
    if !(hi > 0.0 && lo > 1e-10 * hi) {
        return None;
    }
    let target = DVector::from_fn(rows, |i, _| if i < n_own { 1.0 } else { -1.0 });
    let beta = svd.solve(&target, 0.0).ok()?;
    let fitted = a * &beta;
    let eq = (0..n_own).map(|i| (fitted[i] - 1.0).abs()).fold(0.0, f64::max);
    let ineq = (n_own..rows).map(|i| fitted[i]).fold(0.0, f64::max);
    if !(eq <= tol.max(1e-12) && ineq <= 0.0) {
        return None;
    }
    let eq = if own_rel == Relation::Eq { eq } else { (0..n_own).map(|i| (1.0 - fitted[i]).max(0.0)).fold(0.0, f64::max) };
    Some(ClassFeasibility { feasible: true, beta: Some(beta), eq_residual: eq, max_ineq_violation: ineq })
}

/// Decide whether class `k` admits a collapsed neuron; returns the certificate.
pub fn nc_feasible(x: &LabeledDataset, k: usize, tol: f64) -> Result<ClassFeasibility> {
    solve_class(x, k, Relation::Eq, tol)
}

/// Run [`nc_feasible`] for every class.
pub fn nc_feasible_all(x: &LabeledDataset, tol: f64) -> Result<FeasibilityResult> {
    let per_class = (0..x.classes()).map(|k| nc_feasible(x, k, tol)).collect::<Result<Vec<_>>>()?;
    let overall = per_class.iter().all(|c| c.feasible);
    Ok(FeasibilityResult { per_class, overall })
}

/// Whether `X_kᵀβ >= 1`, `X_jᵀβ <= 0` is feasible.
pub fn is_linearly_separable(x: &LabeledDataset, k: usize, tol: f64) -> Result<bool> {
    Ok(solve_class(x, k, Relation::Ge, tol)?.feasible)
}

/// Minimum of `⟨v₁+v, v₂⟩ / sqrt(‖v₁‖² + ‖v‖²)` over `v ⊥ v₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaMin {
    pub min_value: f64,
    /// A minimizer, or a large-norm point whose value is within ~1e-9 of the
    /// infimum when the infimum is not attained.
    pub argmin: DVector<f64>,
    pub attained: bool,
}

pub fn objective_h(v1: &DVector<f64>, v2: &DVector<f64>, v: &DVector<f64>) -> f64 {
    (v1 + v).dot(v2) / (v1.norm_squared() + v.norm_squared()).sqrt()
}

pub fn lemma_min(v1: &DVector<f64>, v2: &DVector<f64>) -> Result<LemmaMin> {
    if v1.len() != v2.len() {
        return Err(NcError::DimensionMismatch("v1 and v2 differ in length".into()));
    }
    let n1 = v1.norm_squared();
    if n1 == 0.0 {
        return invalid("v1 must be nonzero");
    }
    let dim = v1.len();
    let inner = v1.dot(v2);
    if dim == 1 {
        // Only v = 0 is admissible.
        return Ok(LemmaMin { min_value: inner / n1.sqrt(), argmin: DVector::zeros(1), attained: true });
    }
    let pv2 = v2 - v1 * (inner / n1);
    let p = pv2.norm();
    if inner < 0.0 {
        let argmin = &pv2 * (n1 / inner);
        return Ok(LemmaMin { min_value: -v2.norm(), argmin, attained: true });
    }
    let min_value = -(v2.norm_squared() - inner * inner / n1).max(0.0).sqrt();
    if inner == 0.0 && p == 0.0 {
        return Ok(LemmaMin { min_value: 0.0, argmin: DVector::zeros(dim), attained: true });
    }
    // Infimum approached along -Pv₂ (or any direction ⊥ v₁ when Pv₂ = 0).
    let dir = if p > 0.0 { -&pv2 / p } else { orthogonal_unit(v1) };
    let scale = 1e9 * n1.sqrt().max(if p > 0.0 { inner / p } else { 0.0 });
    Ok(LemmaMin { min_value, argmin: dir * scale, attained: false })
}

fn orthogonal_unit(v: &DVector<f64>) -> DVector<f64> {
    let i = v.iamin();
    let mut e = DVector::zeros(v.len());
    e[i] = 1.0;
    let w = &e - v * (v.dot(&e) / v.norm_squared());
    let nw = w.norm();
    w / nw
}

/// Null-space construction of a collapsed neuron for class `k` of a mixture
/// sample. Returns `None` when the constructed β fails verification.
pub fn constructive_beta(x: &LabeledDataset, k: usize, means: &DMatrix<f64>, tol: f64) -> Result<Option<DVector<f64>>> {
    check_class(x, k)?;
    let kk = x.classes();
    if means.nrows() != kk || means.ncols() != x.dim() {
        return Err(NcError::DimensionMismatch(format!(
            "means are {}×{}, expected {}×{}",
            means.nrows(),
            means.ncols(),
            kk,
            x.dim()
        )));
    }
    let n = x.per_class();
    if x.dim() <= n {
        return invalid("construction needs d > n");
    }
    let mu_k = means.row(k).transpose();
    // Noise block of class k up to the (irrelevant) factor sigma.
    let noise = x.block(k).transpose() - DMatrix::from_fn(n, x.dim(), |_, c| mu_k[c]);
    let phi = null_space_basis(&noise, 1e-10);
    if phi.ncols() == 0 {
        return Ok(None);
    }

    let beta = if kk == 2 {
        let mu_o = means.row(1 - k).transpose();
        let pm = phi.transpose() * &mu_k;
        let pn = pm.norm_squared();
        if pn == 0.0 {
            return Ok(None);
        }
        let v1 = &pm / pn;
        let v2 = phi.transpose() * &mu_o;
        let lm = lemma_min(&v1, &v2)?;
        // The infimum representative can be huge; cap to keep residuals sane.
        let v = if lm.argmin.norm() > 1e6 * v1.norm() { lm.argmin.normalize() * (1e6 * v1.norm()) } else { lm.argmin };
        &phi * (v1 + v)
    } else {
        let pp = means * &phi;
        let m = (&pp * pp.transpose())
            .try_inverse()
            .ok_or_else(|| NcError::Numerical("mean matrix restricted to the null space is singular".into()))?;
        let mut ek = DVector::zeros(kk);
        ek[k] = 1.0;
        let rest = DVector::from_element(kk, 1.0) - &ek;
        let a = ek.dot(&(&m * &ek));
        let b = ek.dot(&(&m * &rest));
        let gamma = if b > 0.0 { a / b } else { 1e6 };
        let q = &ek - rest * gamma;
        &phi * (pp.transpose() * (m * q))
    };

    let (eq, ineq) = certificate_residuals(x, k, &beta);
    if eq <= tol && ineq <= tol {
        Ok(Some(beta))
    } else {
        Ok(None)
    }
}

/// Largest noise level certified by the union-bound construction.
pub fn union_bound_threshold(spec: &GmmSpec, epsilon: f64, constant_c: f64) -> Result<f64> {
    let (k, d, n) = (spec.classes(), spec.dim(), spec.n);
    if d <= n {
        return invalid(format!("union bound needs d > n, got d={d}, n={n}"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return invalid("epsilon must lie in (0, 1)");
    }
    let ratio = (d - n) as f64 / d as f64;
    if k == 2 {
        let (m1, m2) = (spec.mean(0), spec.mean(1));
        let (a, b) = (m1.norm(), m2.norm());
        if a == 0.0 || b == 0.0 {
            return invalid("class means must be nonzero");
        }
        let cos = m1.dot(&m2) / (a * b);
        let shift = 4.0 * epsilon / (1.0 - epsilon).powi(2);
        let mut inside = ratio / (n as f64).ln();
        if cos >= -shift {
            inside *= (1.0 - (cos.abs() + shift).powi(2)).max(0.0);
        }
        Ok(constant_c * (1.0 - epsilon) * inside.sqrt() * a.min(b))
    } else {
        let s = singular_values(&spec.means);
        let smin = s[k - 1];
        if smin <= 0.0 {
            return invalid("mean matrix must have full row rank");
        }
        Ok(constant_c * (ratio / ((k * n) as f64).ln()).sqrt() * smin / ((k - 1) as f64).sqrt())
    }
}

/// Default ε: `min(0.1, 1/(10K))`.
pub fn default_epsilon(k: usize) -> f64 {
    (0.1f64).min(1.0 / (10.0 * k as f64))
}

/// Minimum `d/n` from the Gaussian comparison bound.
pub fn gordon_threshold(n: usize, k: usize) -> f64 {
    let (nf, kf) = (n as f64, k as f64);
    let ln = nf.ln();
    (kf + 1.0) / 2.0 + 2.0 * ((kf - 1.0) * ln / nf).sqrt() + (kf + 2.0 * ln) / nf
}

/// How class means are laid out in dimension `d` for a sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum MeanLayout {
    /// `μ₁ = -μ₂ = norm·e₁` (two classes).
    Antipodal { norm: f64 },
    /// `μ_k = norm·e_k`.
    Axes { norm: f64 },
    /// Explicit K×d0 means, zero-padded to `d`.
    Explicit(DMatrix<f64>),
}

impl MeanLayout {
    pub fn means(&self, k: usize, d: usize) -> Result<DMatrix<f64>> {
        match self {
            MeanLayout::Antipodal { norm } => {
                if k != 2 {
                    return invalid("antipodal layout needs K = 2");
                }
                let mut m = DMatrix::zeros(2, d);
                m[(0, 0)] = *norm;
                m[(1, 0)] = -*norm;
                Ok(m)
            }
            MeanLayout::Axes { norm } => {
                if d < k {
                    return invalid("axis layout needs d >= K");
                }
                Ok(DMatrix::from_fn(k, d, |r, c| if r == c { *norm } else { 0.0 }))
            }
            MeanLayout::Explicit(m0) => {
                if m0.nrows() != k || m0.ncols() > d {
                    return invalid("explicit means do not fit the sweep dimensions");
                }
                let mut m = DMatrix::zeros(k, d);
                m.columns_mut(0, m0.ncols()).copy_from(m0);
                Ok(m)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub d_values: Vec<usize>,
    pub sigma_values: Vec<f64>,
    pub k: usize,
    pub n: usize,
    pub layout: MeanLayout,
    pub trials: usize,
    /// Test every class instead of class 0 only.
    pub all_classes: bool,
    pub tol: f64,
    /// Multiplier on the union-bound overlay.
    pub union_constant: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub d: usize,
    pub n: usize,
    pub k: usize,
    pub sigma: f64,
    pub trials: usize,
    pub successes: usize,
    /// Trials where the LP hit a numerical failure.
    pub failures: usize,
    /// NaN when any trial failed numerically.
    pub rate: f64,
    pub union_sigma_star: f64,
    pub gordon_min_d_over_n: f64,
}

/// Success rate of the feasibility LP over a (d, σ) grid.
pub fn feasibility_sweep(grid: &SweepGrid, stream: RngStream) -> Result<Vec<SweepRow>> {
    if grid.d_values.is_empty() || grid.sigma_values.is_empty() || grid.trials == 0 {
        return invalid("sweep grid is empty");
    }
    let mut cells = Vec::new();
    for &d in &grid.d_values {
        for &s in &grid.sigma_values {
            cells.push((d, s));
        }
    }
    let specs = cells
        .iter()
        .map(|&(d, s)| GmmSpec::new(grid.layout.means(grid.k, d)?, s, grid.n))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..grid.trials).map(move |t| (c, t))).collect();
    let outcomes: Vec<Result<Option<bool>>> = jobs
        .par_iter()
        .map(|&(c, t)| {
            let ds = sample_gmm(&specs[c], stream.child(c as u64).child(t as u64))?;
            let classes: Vec<usize> = if grid.all_classes { (0..grid.k).collect() } else { vec![0] };
            let mut ok = true;
            for k in classes {
                match nc_feasible(&ds, k, grid.tol) {
                    Ok(r) => ok &= r.feasible,
                    Err(NcError::Numerical(_)) => return Ok(None),
                    Err(e) => return Err(e),
                }
                if !ok {
                    break;
                }
            }
            Ok(Some(ok))
        })
        .collect();

    let mut rows = Vec::with_capacity(cells.len());
    let mut it = outcomes.into_iter();
    for (c, &(d, sigma)) in cells.iter().enumerate() {
        let (mut successes, mut failures) = (0, 0);
        for _ in 0..grid.trials {
            match it.next().expect("one outcome per job")? {
                Some(true) => successes += 1,
                Some(false) => {}
                None => failures += 1,
            }
        }
        let rate = if failures > 0 { f64::NAN } else { successes as f64 / grid.trials as f64 };
        let union_sigma_star =
            union_bound_threshold(&specs[c], default_epsilon(grid.k), grid.union_constant).unwrap_or(f64::NAN);
        rows.push(SweepRow {
            d,
            n: grid.n,
            k: grid.k,
            sigma,
            trials: grid.trials,
            successes,
            failures,
            rate,
            union_sigma_star,
            gordon_min_d_over_n: gordon_threshold(grid.n, grid.k),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, gaussian_vector};
    use rand::Rng;

    fn rank_full_dataset(k: usize, n: usize, d: usize, seed: u64) -> LabeledDataset {
        let mut rng = RngStream::new(seed, 0).generator();
        LabeledDataset::new(gaussian_matrix(d, k * n, &mut rng), k, n).unwrap()
    }

    #[test]
    fn wide_nonnegative_features_are_feasible() {
        // Heavily degenerate for the simplex: nonnegative entries, zero rhs rows.
        let mut rng = RngStream::new(26, 0).generator();
        let x = gaussian_matrix(600, 40, &mut rng).map(|v| v.max(0.0) * 0.03);
        let ds = LabeledDataset::new(x, 2, 20).unwrap();
        let res = nc_feasible_all(&ds, 1e-9).unwrap();
        assert!(res.overall);
        for (k, c) in res.per_class.iter().enumerate() {
            let (eq, ineq) = certificate_residuals(&ds, k, c.beta.as_ref().unwrap());
            assert!(eq < 1e-9 && ineq <= 0.0);
        }
    }

    #[test]
    fn full_rank_data_is_feasible() {
        let ds = rank_full_dataset(3, 4, 15, 1);
        let res = nc_feasible_all(&ds, 1e-9).unwrap();
        assert!(res.overall);
        for (k, c) in res.per_class.iter().enumerate() {
            let (eq, ineq) = certificate_residuals(&ds, k, c.beta.as_ref().unwrap());
            assert!(eq < 1e-9 && ineq < 1e-9);
        }
    }

    #[test]
    fn ones_outside_range_is_infeasible() {
        // d < n and every column of X_k has zero sum: 1_n is orthogonal to
        // range(X_kᵀ) and so not in it.
        let (n, d) = (6, 3);
        let mut rng = RngStream::new(2, 0).generator();
        let mut x = gaussian_matrix(d, 2 * n, &mut rng);
        for r in 0..d {
            let m = x.row(r).columns(0, n).sum() / n as f64;
            for c in 0..n {
                x[(r, c)] -= m;
            }
        }
        let ds = LabeledDataset::new(x, 2, n).unwrap();
        assert!(!nc_feasible(&ds, 0, 1e-9).unwrap().feasible);
    }

    #[test]
    fn small_two_cluster_instance() {
        let spec = GmmSpec::antipodal(6, 1.0, 0.05, 4).unwrap();
        let ds = sample_gmm(&spec, RngStream::new(3, 0)).unwrap();
        for k in 0..2 {
            let r = nc_feasible(&ds, k, 1e-9).unwrap();
            assert!(r.feasible);
            let cb = constructive_beta(&ds, k, &spec.means, 1e-7).unwrap();
            assert!(cb.is_some());
        }
    }

    #[test]
    fn separability_cases() {
        // Class 0 at x > 1, class 1 at x < 0.
        let x = DMatrix::from_row_slice(2, 6, &[2.0, 3.0, 2.5, -1.0, -2.0, -0.5, 0.3, -0.7, 1.0, 0.2, 1.5, -1.0]);
        let ds = LabeledDataset::new(x, 2, 3).unwrap();
        assert!(is_linearly_separable(&ds, 0, 1e-9).unwrap());
        assert!(is_linearly_separable(&ds, 1, 1e-9).unwrap());

        // Class 0 is a single point at the centroid of a triangle of class 1
        // points (K=2, n=1 vs ... use n=3 with repeated inner point).
        let tri = [(0.0, 0.0), (4.0, 0.0), (0.0, 4.0)];
        let inner = (1.0, 1.0);
        let mut m = DMatrix::zeros(2, 6);
        for i in 0..3 {
            m[(0, i)] = inner.0;
            m[(1, i)] = inner.1;
            m[(0, 3 + i)] = tri[i].0;
            m[(1, 3 + i)] = tri[i].1;
        }
        let ds = LabeledDataset::new(m, 2, 3).unwrap();
        // Exhaustive oracle: inner point is a convex combination with weights (1/2, 1/4, 1/4).
        let w = [0.5, 0.25, 0.25];
        let cx: f64 = (0..3).map(|i| w[i] * tri[i].0).sum();
        let cy: f64 = (0..3).map(|i| w[i] * tri[i].1).sum();
        assert_eq!((cx, cy), inner);
        assert!(!is_linearly_separable(&ds, 0, 1e-9).unwrap());
    }

    #[test]
    fn feasible_implies_separable() {
        let base = RngStream::new(31, 0);
        for t in 0..30 {
            let mut rng = base.child(t).generator();
            let d = rng.random_range(2..8);
            let n = rng.random_range(1..6);
            let ds = LabeledDataset::new(gaussian_matrix(d, 2 * n, &mut rng), 2, n).unwrap();
            if nc_feasible(&ds, 0, 1e-9).unwrap().feasible {
                assert!(is_linearly_separable(&ds, 0, 1e-9).unwrap());
            }
        }
    }

    #[test]
    fn lemma_min_branches() {
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let r = lemma_min(&e1, &e1).unwrap();
        assert_eq!(r.min_value, 0.0);
        let r = lemma_min(&e1, &(-&e1)).unwrap();
        assert_eq!(r.min_value, -1.0);
        assert!(r.attained);
        assert!((objective_h(&e1, &(-&e1), &r.argmin) + 1.0).abs() < 1e-15);
        assert!(lemma_min(&DVector::zeros(3), &e1).is_err());
    }

    #[test]
    fn lemma_min_is_a_lower_bound() {
        let base = RngStream::new(41, 0);
        for t in 0..200 {
            let mut rng = base.child(t).generator();
            let dim = rng.random_range(2..8);
            let v1 = gaussian_vector(dim, &mut rng);
            let v2 = gaussian_vector(dim, &mut rng);
            let lm = lemma_min(&v1, &v2).unwrap();
            let at = objective_h(&v1, &v2, &lm.argmin);
            assert!(at >= lm.min_value - 1e-12);
            assert!(at - lm.min_value < 1e-7, "representative too far from the infimum: {at} vs {}", lm.min_value);
            assert!(lm.argmin.dot(&v1).abs() <= 1e-9 * lm.argmin.norm() * v1.norm());
            for _ in 0..20 {
                let w = gaussian_vector(dim, &mut rng) * rng.random_range(0.01..100.0);
                let v = &w - &v1 * (w.dot(&v1) / v1.norm_squared());
                assert!(objective_h(&v1, &v2, &v) >= lm.min_value - 1e-12);
            }
        }
    }

    #[test]
    fn zero_noise_constructive_beta_is_exact() {
        let spec = GmmSpec::antipodal(8, 2.0, 0.0, 5).unwrap();
        let ds = sample_gmm(&spec, RngStream::new(5, 0)).unwrap();
        let beta = constructive_beta(&ds, 0, &spec.means, 1e-12).unwrap().unwrap();
        let (eq, _) = certificate_residuals(&ds, 0, &beta);
        assert!(eq < 1e-12);
        assert!((spec.mean(0).dot(&beta) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constructive_beta_multiclass_contract() {
        let mut means = DMatrix::zeros(3, 40);
        for k in 0..3 {
            means[(k, k)] = 1.0;
        }
        let spec = GmmSpec::new(means, 0.02, 6).unwrap();
        let ds = sample_gmm(&spec, RngStream::new(6, 0)).unwrap();
        for k in 0..3 {
            let beta = constructive_beta(&ds, k, &spec.means, 1e-7).unwrap().expect("low noise constructs");
            assert!((spec.mean(k).dot(&beta) - 1.0).abs() < 1e-8);
            assert!(nc_feasible(&ds, k, 1e-9).unwrap().feasible);
        }
    }

    #[test]
    fn constructive_beta_rate_in_union_regime() {
        // Half the constant-1 union-bound level: the sufficient
        // condition carries a factor of two that the constant-free bound hides.
        let (n, d) = (20, 400);
        let probe = GmmSpec::antipodal(d, 1.0, 0.0, n).unwrap();
        let sigma = 0.5 * union_bound_threshold(&probe, default_epsilon(2), 1.0).unwrap();
        let spec = GmmSpec::antipodal(d, 1.0, sigma, n).unwrap();
        let base = RngStream::new(51, 0);
        let ok = (0..200u64)
            .into_par_iter()
            .filter(|&t| {
                let ds = sample_gmm(&spec, base.child(t)).unwrap();
                match constructive_beta(&ds, 0, &spec.means, 1e-7).unwrap() {
                    Some(beta) => {
                        assert!((spec.mean(0).dot(&beta) - 1.0).abs() < 1e-8);
                        assert!(nc_feasible(&ds, 0, 1e-9).unwrap().feasible);
                        true
                    }
                    None => false,
                }
            })
            .count();
        assert!(ok >= 180, "constructed in {ok}/200");
    }


    #[test]
    fn union_bound_examples() {
        let n = 50;
        let spec = GmmSpec::antipodal(2 * n, 1.0, 0.1, n).unwrap();
        let eps = default_epsilon(2);
        let got = union_bound_threshold(&spec, eps, 1.0).unwrap();
        let expect = (1.0 - eps) * (1.0 / (2.0 * (n as f64).ln())).sqrt();
        assert!((got - expect).abs() < 1e-15);

        let n = 250;
        let mut means = DMatrix::zeros(4, 3 * n);
        for k in 0..4 {
            means[(k, k)] = 1.0;
        }
        let spec = GmmSpec::new(means, 0.1, n).unwrap();
        let got = union_bound_threshold(&spec, 0.025, 1.0).unwrap();
        let expect = ((2.0 / 3.0) / 1000f64.ln()).sqrt() / 3f64.sqrt();
        assert!((got - expect).abs() < 1e-14);
        assert!((got - 0.17936).abs() < 1e-4);

        let spec = GmmSpec::antipodal(10, 1.0, 0.1, 10).unwrap();
        assert!(union_bound_threshold(&spec, 0.05, 1.0).is_err());
    }

    #[test]
    fn union_bound_shrinks_with_angle() {
        // The angle-dependent form depends on |cos θ|, so it is monotone on
        // acute angles and never exceeds the antipodal value.
        let (n, d) = (20, 80);
        let at = |deg: f64| {
            let th = deg.to_radians();
            let mut means = DMatrix::zeros(2, d);
            means[(0, 0)] = 1.0;
            means[(1, 0)] = th.cos();
            means[(1, 1)] = th.sin();
            union_bound_threshold(&GmmSpec::new(means, 0.1, n).unwrap(), 0.05, 1.0).unwrap()
        };
        let top = at(180.0);
        let mut last = f64::INFINITY;
        for deg in [90.0f64, 75.0, 60.0, 45.0, 30.0, 10.0] {
            let s = at(deg);
            assert!(s <= last + 1e-15 && s <= top);
            last = s;
        }
        assert_eq!(at(150.0), top);
    }

    #[test]
    fn gordon_values() {
        let ln = 300f64.ln();
        let expect = 1.5 + 2.0 * (ln / 300.0).sqrt() + (2.0 + 2.0 * ln) / 300.0;
        assert!((gordon_threshold(300, 2) - expect).abs() < 1e-15);
        assert!((gordon_threshold(300, 2) - 1.8198).abs() < 1e-3);
        let mut prev = f64::INFINITY;
        for n in [2, 5, 10, 50, 100, 1000, 10_000, 1_000_000] {
            let g = gordon_threshold(n, 2);
            assert!(g < prev);
            prev = g;
        }
        assert!((gordon_threshold(100_000_000, 2) - 1.5).abs() < 1e-3);
        let slope = gordon_threshold(1000, 41) - gordon_threshold(1000, 40);
        assert!((slope - 0.5).abs() < 0.05);
    }

    #[test]
    fn sweep_basics() {
        let grid = SweepGrid {
            d_values: vec![12, 25],
            sigma_values: vec![1e-6, 0.5],
            k: 2,
            n: 10,
            layout: MeanLayout::Antipodal { norm: 1.0 },
            trials: 6,
            all_classes: false,
            tol: 1e-9,
            union_constant: 1.0,
        };
        let rows = feasibility_sweep(&grid, RngStream::new(1, 0)).unwrap();
        assert_eq!(rows.len(), 4);
        // d >= Kn: rank-full data, always feasible.
        for r in rows.iter().filter(|r| r.d >= 20) {
            assert_eq!(r.rate, 1.0);
        }
        // Vanishing noise with d > n.
        assert_eq!(rows[0].rate, 1.0);
        let again = feasibility_sweep(&grid, RngStream::new(1, 0)).unwrap();
        assert_eq!(rows, again);
    }
}
