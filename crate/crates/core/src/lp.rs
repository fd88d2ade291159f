//! Dense phase-1 simplex for linear feasibility with free variables.
//!
//! Solves `find x` with `a_i x (<=|>=|=) b_i`. Free variables are split as
//! `x = x⁺ - x⁻`; inequality rows get slack or surplus columns and rows
//! without a usable slack get an artificial column. Phase 1 minimizes the
//! sum of artificials with Dantzig pricing, falling back to Bland's rule
//! during runs of degenerate pivots.

use nalgebra::{DMatrix, DVector};

use crate::error::{mismatch, NcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Copy)]
pub struct LpOptions {
    /// Smallest admissible pivot magnitude and reduced-cost threshold.
    pub pivot_tol: f64,
    /// Phase-1 optimum above this means infeasible.
    pub feas_tol: f64,
    /// Iteration cap; `None` uses `50 * (rows + cols)`.
    pub max_iter: Option<usize>,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self { pivot_tol: 1e-9, feas_tol: 1e-9, max_iter: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Feasible { x: DVector<f64>, iterations: usize },
    Infeasible { phase1_objective: f64, iterations: usize },
}

impl LpOutcome {
    pub fn is_feasible(&self) -> bool {
        matches!(self, LpOutcome::Feasible { .. })
    }
}

struct Tableau {
    // rows × (cols + 1); last column is the right-hand side.
    t: DMatrix<f64>,
    basis: Vec<usize>,
    cols: usize,
    is_artificial: Vec<bool>,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let width = self.cols + 1;
        let p = self.t[(row, col)];
        for j in 0..width {
            self.t[(row, j)] /= p;
        }
        for i in 0..self.t.nrows() {
            if i == row {
                continue;
            }
            let f = self.t[(i, col)];
            if f != 0.0 {
                for j in 0..width {
                    let v = self.t[(row, j)];
                    if v != 0.0 {
                        self.t[(i, j)] -= f * v;
                    }
                }
                self.t[(i, col)] = 0.0;
            }
        }
        self.basis[row] = col;
    }
}

/// Find a point satisfying the constraints, or prove (to tolerance) that none exists.
pub fn find_feasible_point(
    a: &DMatrix<f64>,
    relations: &[Relation],
    b: &DVector<f64>,
    opts: &LpOptions,
) -> Result<LpOutcome> {
    let (m, nv) = a.shape();
    if relations.len() != m || b.len() != m {
        return mismatch(format!("{} rows but {} relations and {} rhs", m, relations.len(), b.len()));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(NcError::InvalidInput("non-finite LP data".into()));
    }

    // Normalize so every rhs is nonnegative.
    let mut rows = a.clone();
    let mut rhs = b.clone();
    let mut rel = relations.to_vec();
    for i in 0..m {
        if rhs[i] < 0.0 {
            rows.row_mut(i).neg_mut();
            rhs[i] = -rhs[i];
            rel[i] = match rel[i] {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }

    let n_slack = rel.iter().filter(|r| **r != Relation::Eq).count();
    let n_art = rel.iter().filter(|r| **r != Relation::Le).count();
    let cols = 2 * nv + n_slack + n_art;
    let mut t = DMatrix::zeros(m, cols + 1);
    let mut basis = vec![0; m];
    let mut is_artificial = vec![false; cols];
    let (mut s_idx, mut a_idx) = (2 * nv, 2 * nv + n_slack);
    for i in 0..m {
        for j in 0..nv {
            t[(i, j)] = rows[(i, j)];
            t[(i, nv + j)] = -rows[(i, j)];
        }
        t[(i, cols)] = rhs[i];
        match rel[i] {
            Relation::Le => {
                t[(i, s_idx)] = 1.0;
                basis[i] = s_idx;
                s_idx += 1;
            }
            Relation::Ge => {
                t[(i, s_idx)] = -1.0;
                s_idx += 1;
                t[(i, a_idx)] = 1.0;
                basis[i] = a_idx;
                is_artificial[a_idx] = true;
                a_idx += 1;
            }
            Relation::Eq => {
                t[(i, a_idx)] = 1.0;
                basis[i] = a_idx;
                is_artificial[a_idx] = true;
                a_idx += 1;
            }
        }
    }
    let mut tab = Tableau { t, basis, cols, is_artificial };

    let max_iter = opts.max_iter.unwrap_or(50 * (m + cols));
    let mut iterations = 0;
    let mut cost = vec![0.0; cols];
    let mut degenerate_run = 0usize;
    const BLAND_AFTER: usize = 50;
    loop {
        // Reduced costs of the phase-1 objective: c_j - sum over artificial rows.
        for (j, c) in cost.iter_mut().enumerate() {
            *c = if tab.is_artificial[j] { 1.0 } else { 0.0 };
        }
        for i in 0..m {
            if tab.is_artificial[tab.basis[i]] {
                for (j, c) in cost.iter_mut().enumerate() {
                    *c -= tab.t[(i, j)];
                }
            }
        }
        let enter = if degenerate_run >= BLAND_AFTER {
            (0..cols).find(|&j| cost[j] < -opts.pivot_tol)
        } else {
            (0..cols).filter(|&j| cost[j] < -opts.pivot_tol).min_by(|&x, &y| cost[x].total_cmp(&cost[y]))
        };
        let Some(enter) = enter else { break };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let p = tab.t[(i, enter)];
            if p > opts.pivot_tol {
                let ratio = tab.t[(i, cols)] / p;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((r, best)) => {
                        if ratio < best - 1e-12 * best.abs().max(1.0)
                            || (ratio <= best + 1e-12 * best.abs().max(1.0) && tab.basis[i] < tab.basis[r])
                        {
                            Some((i, ratio))
                        } else {
                            Some((r, best))
                        }
                    }
                };
            }
        }
        let Some((row, step)) = leave else {
            // Unbounded descent is impossible for a sum of nonnegatives.
            return Err(NcError::Numerical("phase-1 ratio test found no pivot row".into()));
        };
        degenerate_run = if step <= 1e-12 { degenerate_run + 1 } else { 0 };
        tab.pivot(row, enter);
        iterations += 1;
        if iterations >= max_iter {
            return Err(NcError::Numerical(format!("simplex iteration cap {max_iter} reached")));
        }
    }

    let objective: f64 = (0..m)
        .filter(|&i| tab.is_artificial[tab.basis[i]])
        .map(|i| tab.t[(i, cols)])
        .sum();
    if objective > opts.feas_tol {
        return Ok(LpOutcome::Infeasible { phase1_objective: objective, iterations });
    }

    // Recompute basic values from the original columns to shed pivot drift.
    let mut full = DMatrix::zeros(m, cols);
    for i in 0..m {
        for j in 0..nv {
            full[(i, j)] = rows[(i, j)];
            full[(i, nv + j)] = -rows[(i, j)];
        }
    }
    full.view_mut((0, 2 * nv), (m, cols - 2 * nv)).copy_from(&tab_identity_block(&rel, n_slack, n_art));
    let mut bmat = DMatrix::zeros(m, m);
    for (i, &col) in tab.basis.iter().enumerate() {
        bmat.set_column(i, &full.column(col));
    }
    let xb = match bmat.lu().solve(&rhs) {
        Some(v) if v.iter().all(|x| x.is_finite()) => v,
        _ => DVector::from_fn(m, |i, _| tab.t[(i, cols)]),
    };
    let mut xs = DVector::zeros(cols);
    for (i, &col) in tab.basis.iter().enumerate() {
        xs[col] = xb[i];
    }
    let x = DVector::from_fn(nv, |j, _| xs[j] - xs[nv + j]);
    Ok(LpOutcome::Feasible { x, iterations })
}

fn tab_identity_block(rel: &[Relation], n_slack: usize, n_art: usize) -> DMatrix<f64> {
    let m = rel.len();
    let mut blk = DMatrix::zeros(m, n_slack + n_art);
    let (mut s, mut a) = (0, n_slack);
    for (i, r) in rel.iter().enumerate() {
        match r {
            Relation::Le => {
                blk[(i, s)] = 1.0;
                s += 1;
            }
            Relation::Ge => {
                blk[(i, s)] = -1.0;
                s += 1;
                blk[(i, a)] = 1.0;
                a += 1;
            }
            Relation::Eq => {
                blk[(i, a)] = 1.0;
                a += 1;
            }
        }
    }
    blk
}

/// Largest violation of the constraints at `x` (0 when satisfied).
pub fn max_violation(a: &DMatrix<f64>, relations: &[Relation], b: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let ax = a * x;
    let mut worst: f64 = 0.0;
    for i in 0..b.len() {
        let r = ax[i] - b[i];
        let v = match relations[i] {
            Relation::Le => r.max(0.0),
            Relation::Ge => (-r).max(0.0),
            Relation::Eq => r.abs(),
        };
        worst = worst.max(v);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian_matrix;
    use crate::rng::RngStream;
    use rand::Rng;

    #[test]
    fn tiny_box() {
        // x + y = 1, x <= 0.25, y >= 0.5
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        let rel = [Relation::Eq, Relation::Le, Relation::Ge];
        let b = DVector::from_vec(vec![1.0, 0.25, 0.5]);
        let out = find_feasible_point(&a, &rel, &b, &LpOptions::default()).unwrap();
        let LpOutcome::Feasible { x, .. } = out else { panic!("expected feasible") };
        assert!(max_violation(&a, &rel, &b, &x) < 1e-12);

        let b2 = DVector::from_vec(vec![1.0, 0.25, 0.7]);
        let rel2 = [Relation::Eq, Relation::Le, Relation::Le];
        let a2 = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        // x + y = 1 with x <= .25, y <= .7 is infeasible.
        let out = find_feasible_point(&a2, &rel2, &b2, &LpOptions::default()).unwrap();
        assert!(!out.is_feasible());
    }

    #[test]
    fn planted_feasible_points() {
        let base = RngStream::new(21, 0);
        for t in 0..100 {
            let mut rng = base.child(t).generator();
            let m = rng.random_range(2..15);
            let nv = rng.random_range(1..12);
            let a = gaussian_matrix(m, nv, &mut rng);
            let x0 = DMatrix::from_fn(nv, 1, |_, _| rng.random_range(-2.0..2.0)).column(0).into_owned();
            let ax = &a * &x0;
            let mut rel = Vec::with_capacity(m);
            let mut b = DVector::zeros(m);
            for i in 0..m {
                let slack: f64 = rng.random_range(0.0..1.0);
                match rng.random_range(0..3) {
                    0 => {
                        rel.push(Relation::Le);
                        b[i] = ax[i] + slack;
                    }
                    1 => {
                        rel.push(Relation::Ge);
                        b[i] = ax[i] - slack;
                    }
                    _ => {
                        rel.push(Relation::Eq);
                        b[i] = ax[i];
                    }
                }
            }
            let out = find_feasible_point(&a, &rel, &b, &LpOptions::default()).unwrap();
            let LpOutcome::Feasible { x, .. } = out else { panic!("trial {t}: planted point missed") };
            assert!(max_violation(&a, &rel, &b, &x) < 1e-8, "trial {t}");
        }
    }

    #[test]
    fn planted_farkas_certificates() {
        // A x <= b with y >= 0, Aᵀy = 0, bᵀy < 0 has no solution.
        let base = RngStream::new(22, 0);
        for t in 0..100 {
            let mut rng = base.child(t).generator();
            let m = rng.random_range(2..15);
            let nv = rng.random_range(1..10);
            let mut a = gaussian_matrix(m, nv, &mut rng);
            let y: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
            // Fix the last row so that Aᵀy = 0.
            let mut acc = DVector::zeros(nv);
            for i in 0..m - 1 {
                acc += a.row(i).transpose() * y[i];
            }
            a.set_row(m - 1, &(-acc / y[m - 1]).transpose());
            let mut b = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let by: f64 = (0..m).map(|i| b[i] * y[i]).sum();
            let target = -rng.random_range(0.05..1.0);
            b[m - 1] += (target - by) / y[m - 1];
            let rel = vec![Relation::Le; m];
            let out = find_feasible_point(&a, &rel, &b, &LpOptions::default()).unwrap();
            assert!(!out.is_feasible(), "trial {t}: Farkas instance reported feasible");
        }
    }

    #[test]
    fn size_mismatch() {
        let a = DMatrix::zeros(2, 2);
        let b = DVector::zeros(3);
        assert!(find_feasible_point(&a, &[Relation::Le; 2], &b, &LpOptions::default()).is_err());
    }
}
