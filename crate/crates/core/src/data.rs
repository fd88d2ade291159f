//! Balanced labeled datasets, label and centering matrices, Gaussian mixtures.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, mismatch, Result};
use crate::rng::{normal, RngStream};

/// Data matrix with samples as columns, grouped by class: columns
/// `k*n .. (k+1)*n` belong to class `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    x: DMatrix<f64>,
    k: usize,
    n: usize,
}

impl LabeledDataset {
    pub fn new(x: DMatrix<f64>, k: usize, n: usize) -> Result<Self> {
        if k < 2 || n < 1 {
            return invalid(format!("need K >= 2 and n >= 1, got K={k}, n={n}"));
        }
        if x.nrows() < 1 {
            return invalid("data dimension must be at least 1");
        }
        if x.ncols() != k * n {
            return mismatch(format!("X has {} columns, expected K*n = {}", x.ncols(), k * n));
        }
        Ok(Self { x, k, n })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.x
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn per_class(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn len(&self) -> usize {
        self.k * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// d×n block of class `k`.
    pub fn block(&self, k: usize) -> DMatrix<f64> {
        self.x.columns(k * self.n, self.n).into_owned()
    }

    /// Columns of every class except `k`, in order.
    pub fn others(&self, k: usize) -> DMatrix<f64> {
        let d = self.dim();
        let mut out = DMatrix::zeros(d, (self.k - 1) * self.n);
        let mut c = 0;
        for j in 0..self.k {
            if j == k {
                continue;
            }
            out.columns_mut(c, self.n).copy_from(&self.x.columns(j * self.n, self.n));
            c += self.n;
        }
        out
    }

    pub fn label_of(&self, column: usize) -> usize {
        column / self.n
    }

    pub fn labels(&self) -> DMatrix<f64> {
        label_matrix_unchecked(self.k, self.n)
    }
}

/// Gaussian mixture: class `k` samples are `mu_k + sigma * z` with `z ~ N(0, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmSpec {
    /// K×d, row k is the mean of class k.
    pub means: DMatrix<f64>,
    pub sigma: f64,
    pub n: usize,
}

impl GmmSpec {
    pub fn new(means: DMatrix<f64>, sigma: f64, n: usize) -> Result<Self> {
        let spec = Self { means, sigma, n };
        spec.validate()?;
        Ok(spec)
    }

    /// Two classes with means `+norm*e1` and `-norm*e1` in dimension `d`.
    pub fn antipodal(d: usize, norm: f64, sigma: f64, n: usize) -> Result<Self> {
        let mut means = DMatrix::zeros(2, d);
        means[(0, 0)] = norm;
        means[(1, 0)] = -norm;
        Self::new(means, sigma, n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return invalid(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        if self.means.iter().any(|v| !v.is_finite()) {
            return invalid("means must be finite");
        }
        if self.means.nrows() < 2 || self.means.ncols() < 1 || self.n < 1 {
            return invalid("need K >= 2 means of dimension >= 1 and n >= 1");
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.means.nrows()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn mean(&self, k: usize) -> DVector<f64> {
        self.means.row(k).transpose()
    }
}

/// Draw one dataset from the mixture. Noise is drawn column by column,
/// class by class, from a single stream.
pub fn sample_gmm(spec: &GmmSpec, stream: RngStream) -> Result<LabeledDataset> {
    spec.validate()?;
    let (k, d, n) = (spec.classes(), spec.dim(), spec.n);
    let mut rng = stream.generator();
    let mut x = DMatrix::zeros(d, k * n);
    for c in 0..k {
        for i in 0..n {
            let col = c * n + i;
            for r in 0..d {
                x[(r, col)] = spec.means[(c, r)] + spec.sigma * normal(&mut rng);
            }
        }
    }
    LabeledDataset::new(x, k, n)
}

fn label_matrix_unchecked(k: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, k * n, |r, c| if c / n == r { 1.0 } else { 0.0 })
}

/// `Y = I_K ⊗ 1_nᵀ`.
pub fn label_matrix(k: usize, n: usize) -> Result<DMatrix<f64>> {
    if k < 2 || n < 1 {
        return invalid(format!("need K >= 2 and n >= 1, got K={k}, n={n}"));
    }
    Ok(label_matrix_unchecked(k, n))
}

/// `I_K - J_K / K`.
pub fn centering_matrix(k: usize) -> DMatrix<f64> {
    let kf = k as f64;
    DMatrix::from_fn(k, k, |r, c| if r == c { 1.0 - 1.0 / kf } else { -1.0 / kf })
}

/// Column-block averages of `h` (D×Kn), one column per class.
pub fn class_means(h: &DMatrix<f64>, k: usize, n: usize) -> Result<DMatrix<f64>> {
    if k == 0 || n == 0 || h.ncols() != k * n {
        return mismatch(format!("H has {} columns, expected K*n = {}", h.ncols(), k * n));
    }
    let mut out = DMatrix::zeros(h.nrows(), k);
    for c in 0..k {
        let block = h.columns(c * n, n);
        for r in 0..h.nrows() {
            out[(r, c)] = block.row(r).sum() / n as f64;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn label_matrix_small() {
        let y = label_matrix(2, 2).unwrap();
        assert_eq!(y, DMatrix::from_row_slice(2, 4, &[1., 1., 0., 0., 0., 0., 1., 1.]));
        assert_eq!(label_matrix(3, 1).unwrap(), DMatrix::identity(3, 3));
        assert!(label_matrix(1, 3).is_err());
        assert!(label_matrix(2, 0).is_err());
    }

    proptest! {
        #[test]
        fn label_gram_identities(k in 2usize..7, n in 1usize..9) {
            let y = label_matrix(k, n).unwrap();
            let yyt = &y * y.transpose();
            prop_assert_eq!(yyt, DMatrix::identity(k, k) * n as f64);
            let yty = y.transpose() * &y;
            for i in 0..k * n {
                for j in 0..k * n {
                    let expect = if i / n == j / n { 1.0 } else { 0.0 };
                    prop_assert_eq!(yty[(i, j)], expect);
                }
            }
        }

        #[test]
        fn centering_is_projector(k in 1usize..12) {
            let c = centering_matrix(k);
            prop_assert!((&c - c.transpose()).norm() == 0.0);
            prop_assert!((&c * &c - &c).norm() < 1e-14);
            prop_assert!((&c * DVector::from_element(k, 1.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn class_means_cases() {
        let h0 = DMatrix::from_row_slice(3, 2, &[1., 2., 3., 4., 5., 6.]);
        let mut h = DMatrix::zeros(3, 6);
        for c in 0..2 {
            for i in 0..3 {
                h.set_column(c * 3 + i, &h0.column(c));
            }
        }
        assert_eq!(class_means(&h, 2, 3).unwrap(), h0);

        let r = DMatrix::from_row_slice(3, 4, &[1., 3., -2., 0., 0.5, 0.5, 7., 9., -1., 2., 4., 4.]);
        let m = class_means(&r, 2, 2).unwrap();
        for row in 0..3 {
            assert_eq!(m[(row, 0)], (r[(row, 0)] + r[(row, 1)]) / 2.0);
            assert_eq!(m[(row, 1)], (r[(row, 2)] + r[(row, 3)]) / 2.0);
        }
        assert_eq!(class_means(&DMatrix::zeros(2, 4), 2, 2).unwrap(), DMatrix::zeros(2, 2));
        assert!(class_means(&r, 3, 2).is_err());
    }

    #[test]
    fn zero_noise_repeats_means() {
        let mut means = DMatrix::zeros(2, 3);
        means[(0, 0)] = 1.0;
        means[(1, 1)] = 1.0;
        let spec = GmmSpec::new(means.clone(), 0.0, 3).unwrap();
        let ds = sample_gmm(&spec, RngStream::new(1, 0)).unwrap();
        for col in 0..6 {
            assert_eq!(ds.x().column(col).transpose(), means.row(col / 3));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = GmmSpec::antipodal(4, 1.0, 1.0, 10).unwrap();
        let a = sample_gmm(&spec, RngStream::new(5, 9)).unwrap();
        let b = sample_gmm(&spec, RngStream::new(5, 9)).unwrap();
        assert_eq!(a, b);
        let c = sample_gmm(&spec, RngStream::new(5, 10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empirical_means_converge() {
        let mut means = DMatrix::zeros(2, 4);
        means[(0, 0)] = 1.0;
        means[(0, 3)] = -2.0;
        means[(1, 1)] = 0.5;
        let n = 100_000;
        let spec = GmmSpec::new(means.clone(), 1.0, n).unwrap();
        let ds = sample_gmm(&spec, RngStream::new(11, 0)).unwrap();
        let m = class_means(ds.x(), 2, n).unwrap();
        for c in 0..2 {
            for r in 0..4 {
                assert!((m[(r, c)] - means[(c, r)]).abs() < 0.02);
            }
        }
    }

    #[test]
    fn dataset_validation() {
        assert!(LabeledDataset::new(DMatrix::zeros(2, 5), 2, 2).is_err());
        assert!(LabeledDataset::new(DMatrix::zeros(2, 2), 1, 2).is_err());
        let ds = LabeledDataset::new(DMatrix::from_fn(1, 6, |_, c| c as f64), 3, 2).unwrap();
        assert_eq!(ds.others(1), DMatrix::from_row_slice(1, 4, &[0., 1., 4., 5.]));
        assert_eq!(ds.label_of(3), 1);
    }
}
