//! Neural collapse metrics for a (features, classifier) pair.

use nalgebra::DMatrix;

use crate::data::{centering_matrix, class_means};
use crate::error::{mismatch, Result};

/// Within-class variability (`nc1`), mean-feature orthogonality (`nc2_h`),
/// classifier simplex structure (`nc2_w`) and classifier/mean alignment (`nc3`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NcMetrics {
    pub nc1: f64,
    pub nc2_h: f64,
    pub nc2_w: f64,
    pub nc3: f64,
    /// Set when the between-class covariance or a normalizing Gram is zero;
    /// the affected metrics are NaN.
    pub degenerate: bool,
}

fn normalized_gap(g: &DMatrix<f64>, target: &DMatrix<f64>) -> Option<f64> {
    let nrm = g.norm();
    if nrm == 0.0 || !nrm.is_finite() {
        return None;
    }
    Some((g / nrm - target).norm())
}

/// Compute all four metrics. `h` is D×Kn (class-grouped columns), `w` is D×K.
pub fn nc_metrics(h: &DMatrix<f64>, w: &DMatrix<f64>, k: usize, n: usize) -> Result<NcMetrics> {
    if h.ncols() != k * n || w.ncols() != k || w.nrows() != h.nrows() {
        return mismatch(format!(
            "H is {}×{}, W is {}×{}, expected D×{} and D×{k}",
            h.nrows(),
            h.ncols(),
            w.nrows(),
            w.ncols(),
            k * n
        ));
    }
    let big_n = (k * n) as f64;
    let kf = k as f64;
    let means = class_means(h, k, n)?;
    let global = means.column_mean();
    let mut centered_means = means.clone();
    for mut c in centered_means.column_iter_mut() {
        c -= &global;
    }
    let mut within = h.clone();
    for (j, mut c) in within.column_iter_mut().enumerate() {
        c -= means.column(j / n);
    }

    let mut degenerate = false;
    // Σ_B = M Mᵀ / K with M = centered means; its pseudo-inverse is
    // U diag(K / s²) Uᵀ over the nonzero singular values of M.
    let nc1 = {
        let svd = centered_means.clone().svd(true, false);
        let u = svd.u.expect("requested");
        let s = &svd.singular_values;
        let top = s.iter().copied().fold(0.0, f64::max);
        let tol = h.nrows().max(k) as f64 * f64::EPSILON * top;
        if top == 0.0 {
            degenerate = true;
            f64::NAN
        } else {
            let mut tr = 0.0;
            // Centered means sum to zero, so at most K-1 directions count.
            for j in 0..s.len().min(k - 1) {
                if s[j] > tol {
                    let proj = within.transpose() * u.column(j);
                    tr += kf / (s[j] * s[j]) * proj.norm_squared() / big_n;
                }
            }
            tr / kf
        }
    };

    let simplex = centering_matrix(k) / (kf - 1.0).sqrt();
    let eye = DMatrix::identity(k, k) / kf.sqrt();
    let mut pick = |v: Option<f64>| {
        v.unwrap_or_else(|| {
            degenerate = true;
            f64::NAN
        })
    };
    let nc2_h = pick(normalized_gap(&(means.transpose() * &means), &eye));
    let nc2_w = pick(normalized_gap(&(w.transpose() * w), &simplex));
    let nc3 = pick(normalized_gap(&(w.transpose() * &means), &simplex));
    Ok(NcMetrics { nc1, nc2_h, nc2_w, nc3, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, pinv};
    use crate::rng::RngStream;

    fn collapsed(hbar: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
        let k = hbar.ncols();
        DMatrix::from_fn(hbar.nrows(), k * n, |r, c| hbar[(r, c / n)])
    }

    #[test]
    fn exact_collapse_scores_zero() {
        let k = 3;
        let mut hbar = DMatrix::zeros(5, k);
        for j in 0..k {
            hbar[(j, j)] = 2.0;
        }
        let h = collapsed(&hbar, 4);
        let w = &hbar * centering_matrix(k) * 0.7;
        let m = nc_metrics(&h, &w, k, 4).unwrap();
        assert!(m.nc1.abs() < 1e-15);
        assert!(m.nc2_h < 1e-15 && m.nc2_w < 1e-15 && m.nc3 < 1e-15);
        assert!(!m.degenerate);
    }

    #[test]
    fn simplex_classifier_any_scale() {
        let mut rng = RngStream::new(3, 0).generator();
        let h = gaussian_matrix(4, 6, &mut rng);
        for c in [0.01, 1.0, 37.0] {
            let mut w = DMatrix::zeros(4, 3);
            w.view_mut((0, 0), (3, 3)).copy_from(&(centering_matrix(3) * c));
            assert!(nc_metrics(&h, &w, 3, 2).unwrap().nc2_w < 1e-14);
        }
    }

    /// Straight transcription of the definitions with explicit D×D matrices.
    fn transcription(h: &DMatrix<f64>, w: &DMatrix<f64>, k: usize, n: usize) -> [f64; 4] {
        let d = h.nrows();
        let nn = (k * n) as f64;
        let mut hbar = DMatrix::zeros(d, k);
        for c in 0..k {
            for i in 0..n {
                hbar.set_column(c, &(hbar.column(c) + h.column(c * n + i) / n as f64));
            }
        }
        let hg = hbar.column_sum() / k as f64;
        let mut sw = DMatrix::zeros(d, d);
        for i in 0..k * n {
            let e = h.column(i) - hbar.column(i / n);
            sw += &e * e.transpose() / nn;
        }
        let mut sb = DMatrix::zeros(d, d);
        for c in 0..k {
            let e = hbar.column(c) - &hg;
            sb += &e * e.transpose() / k as f64;
        }
        let nc1 = (sw * pinv(&sb, 1e-12)).trace() / k as f64;
        let c = centering_matrix(k) / ((k - 1) as f64).sqrt();
        let gh = hbar.transpose() * &hbar;
        let gw = w.transpose() * w;
        let gx = w.transpose() * &hbar;
        [
            nc1,
            (&gh / gh.norm() - DMatrix::identity(k, k) / (k as f64).sqrt()).norm(),
            (&gw / gw.norm() - &c).norm(),
            (&gx / gx.norm() - &c).norm(),
        ]
    }

    #[test]
    fn matches_transcription() {
        for t in 0..20 {
            let mut rng = RngStream::new(4, t).generator();
            let (k, n, d) = if t == 0 { (2, 2, 3) } else { (2 + (t as usize) % 3, 1 + (t as usize) % 4, 3 + (t as usize) % 5) };
            let h = gaussian_matrix(d, k * n, &mut rng);
            let w = gaussian_matrix(d, k, &mut rng);
            let m = nc_metrics(&h, &w, k, n).unwrap();
            let o = transcription(&h, &w, k, n);
            let got = [m.nc1, m.nc2_h, m.nc2_w, m.nc3];
            for i in 0..4 {
                assert!((got[i] - o[i]).abs() <= 1e-12 * o[i].abs().max(1.0), "t={t} metric {i}: {} vs {}", got[i], o[i]);
            }
        }
    }

    #[test]
    fn invariances() {
        let mut rng = RngStream::new(5, 0).generator();
        let (k, n, d) = (3, 4, 6);
        let h = gaussian_matrix(d, k * n, &mut rng).map(f64::abs);
        let w = gaussian_matrix(d, k, &mut rng);
        let base = nc_metrics(&h, &w, k, n).unwrap();
        let scaled = nc_metrics(&(&h * 3.5), &(&w * 0.2), k, n).unwrap();
        assert!((base.nc2_w - scaled.nc2_w).abs() < 1e-12);
        assert!((base.nc3 - scaled.nc3).abs() < 1e-12);
        let q = gaussian_matrix(d, d, &mut rng).qr().q();
        let rot = nc_metrics(&(&q * &h), &(&q * &w), k, n).unwrap();
        assert!((base.nc1 - rot.nc1).abs() < 1e-10 * base.nc1.max(1.0));
    }

    #[test]
    fn degenerate_inputs_are_flagged() {
        let h = DMatrix::from_element(3, 4, 1.0);
        let w = DMatrix::zeros(3, 2);
        let m = nc_metrics(&h, &w, 2, 2).unwrap();
        assert!(m.degenerate && m.nc1.is_nan() && m.nc2_w.is_nan());
        assert!(nc_metrics(&h, &w, 2, 3).is_err());
    }
}
