//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{NcError, Result};
use crate::rng::normal;

/// Default relative rank tolerance `max(m, d) * eps`.
pub fn default_rank_tol(m: usize, d: usize) -> f64 {
    m.max(d) as f64 * f64::EPSILON
}

/// Singular values in descending order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Largest singular value.
pub fn op_norm(a: &DMatrix<f64>) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

/// Count of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(a);
    let Some(&top) = s.first() else { return 0 };
    if top == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rel_tol * top).count()
}

/// Orthonormal basis (d×r) of the numerical null space of `a` (m×d).
///
/// Singular values at or below `tol * sigma_max` count as zero; a
/// nonpositive `tol` selects [`default_rank_tol`]. The zero matrix yields the
/// identity.
pub fn null_space_basis(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let (m, d) = a.shape();
    let tol = if tol > 0.0 { tol } else { default_rank_tol(m, d) };
    // Pad with zero rows so the SVD returns a full d×d right factor.
    let padded = if m < d {
        let mut p = DMatrix::zeros(d, d);
        p.rows_mut(0, m).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let s = &svd.singular_values;
    let top = s.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..s.len()).filter(|&i| top == 0.0 || s[i] <= tol * top).collect();
    let mut phi = DMatrix::zeros(d, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        phi.set_column(j, &vt.row(i).transpose());
    }
    phi
}

/// Moore-Penrose pseudo-inverse; singular values at or below
/// `rel_tol * sigma_max` are dropped.
pub fn pinv(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (m, d) = a.shape();
    if m == 0 || d == 0 {
        return DMatrix::zeros(d, m);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    let s = &svd.singular_values;
    let top = s.iter().copied().fold(0.0, f64::max);
    let mut out = DMatrix::zeros(d, m);
    if top == 0.0 {
        return out;
    }
    for i in 0..s.len() {
        if s[i] > rel_tol * top {
            out += vt.row(i).transpose() * u.column(i).transpose() / s[i];
        }
    }
    out
}

/// Eigenvalues of the symmetric part of `a`, ascending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

pub fn sym_min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(a).first().copied().unwrap_or(f64::NAN)
}

/// Matrix with i.i.d. `N(0, 1)` entries, filled column by column.
pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, cols);
    for c in 0..cols {
        for r in 0..rows {
            out[(r, c)] = normal(rng);
        }
    }
    out
}

pub fn gaussian_vector<R: Rng + ?Sized>(len: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(len, |_, _| normal(rng))
}

/// Haar-distributed d×m matrix with orthonormal columns (QR of a Gaussian
/// matrix with the sign of R's diagonal fixed positive).
pub fn random_orthonormal<R: Rng + ?Sized>(d: usize, m: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if m > d || m == 0 {
        return Err(NcError::InvalidInput(format!("need 1 <= m <= d, got m={m}, d={d}")));
    }
    let g = gaussian_matrix(d, m, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..m {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// Householder reflection `I - 2 u uᵀ` sending a vector to `‖v‖ e₁`.
#[derive(Debug, Clone)]
pub struct Reflector {
    u: Option<DVector<f64>>,
}

impl Reflector {
    pub fn to_first_axis(v: &DVector<f64>) -> Self {
        let norm = v.norm();
        let mut u = v.clone();
        u[0] -= norm;
        let un = u.norm();
        if norm == 0.0 || un <= 1e-15 * norm {
            return Self { u: None };
        }
        Self { u: Some(u / un) }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.u {
            None => x.clone(),
            Some(u) => x - u * (2.0 * u.dot(x)),
        }
    }

    /// Reflect every column of `x`.
    pub fn apply_columns(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.u {
            None => x.clone(),
            Some(u) => {
                let proj = u.transpose() * x;
                x - u * proj * 2.0
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    #[test]
    fn null_space_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let phi = null_space_basis(&a, 0.0);
        assert_eq!(phi.ncols(), 1);
        assert!((phi[(1, 0)].abs() - 1.0).abs() < 1e-14);
        assert!(phi[(0, 0)].abs() < 1e-14);

        let z = DMatrix::zeros(3, 5);
        let phi = null_space_basis(&z, 0.0);
        assert_eq!(phi.ncols(), 5);
        assert!((phi.transpose() * &phi - DMatrix::identity(5, 5)).norm() < 1e-14);
    }

    #[test]
    fn gaussian_null_space_dimension() {
        let mut rng = RngStream::new(3, 0).generator();
        for (n, d) in [(3, 7), (10, 25), (1, 4), (6, 6), (9, 4)] {
            let a = gaussian_matrix(n, d, &mut rng);
            let phi = null_space_basis(&a, 0.0);
            // Oracle: rank from the singular values of the unpadded matrix.
            let rank = numerical_rank(&a, default_rank_tol(n, d));
            assert_eq!(phi.ncols(), d - rank);
            assert_eq!(phi.ncols(), d.saturating_sub(n));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn null_space_contract(seed in 0u64..u64::MAX, m in 1usize..9, d in 1usize..9, drop in 0usize..3) {
            let mut rng = RngStream::new(seed, 1).generator();
            // Low-rank products exercise nontrivial tolerances.
            let r = m.min(d).saturating_sub(drop).max(1);
            let a = gaussian_matrix(m, r, &mut rng) * gaussian_matrix(r, d, &mut rng);
            let tol = 1e-10;
            let phi = null_space_basis(&a, tol);
            let an = a.norm();
            prop_assert!((&a * &phi).norm() <= 10.0 * tol * an + 1e-300);
            prop_assert!((phi.transpose() * &phi - DMatrix::identity(phi.ncols(), phi.ncols())).norm() <= 10.0 * tol);
            prop_assert_eq!(phi.ncols(), d - numerical_rank(&a, tol));
        }
    }

    #[test]
    fn pinv_of_full_rank_is_inverse() {
        let mut rng = RngStream::new(4, 0).generator();
        let a = gaussian_matrix(4, 4, &mut rng);
        let inv = a.clone().try_inverse().unwrap();
        assert!((pinv(&a, 1e-12) - inv).norm() < 1e-9);
        let tall = gaussian_matrix(6, 3, &mut rng);
        let p = pinv(&tall, 1e-12);
        assert!((&p * &tall - DMatrix::identity(3, 3)).norm() < 1e-10);
    }

    #[test]
    fn orthonormal_columns() {
        let mut rng = RngStream::new(8, 0).generator();
        let q = random_orthonormal(9, 4, &mut rng).unwrap();
        assert!((q.transpose() * &q - DMatrix::identity(4, 4)).norm() < 1e-12);
        assert!(random_orthonormal(3, 4, &mut rng).is_err());
    }

    #[test]
    fn reflector_aligns_with_axis() {
        let mut rng = RngStream::new(9, 0).generator();
        for _ in 0..20 {
            let v = gaussian_vector(6, &mut rng);
            let h = Reflector::to_first_axis(&v);
            let hv = h.apply(&v);
            assert!((hv[0] - v.norm()).abs() < 1e-12);
            assert!(hv.rows(1, 5).norm() < 1e-12);
            let w = gaussian_vector(6, &mut rng);
            assert!((h.apply(&h.apply(&w)) - &w).norm() < 1e-12);
        }
        let e = DVector::from_vec(vec![2.0, 0.0, 0.0]);
        assert_eq!(Reflector::to_first_axis(&e).apply(&e), e);
    }
}
