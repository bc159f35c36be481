//! Full singular value decomposition via one-sided Jacobi rotations.
//!
//! The factorization drives everything downstream: numerical rank, null-space
//! bases, least-singular-vector directions and the spectral penalties. It is
//! written for accuracy at desk scale (matrices up to ~1024x100), not for
//! BLAS-level throughput.
//!
//! Algorithm: cyclically sweep over column pairs of a working copy of `A`
//! (the tall orientation), applying Givens rotations on the right until every
//! pair of columns is mutually orthogonal in the relative sense
//! `|b_p . b_q| <= 1e-14 * ||b_p|| * ||b_q||`. Accumulated rotations give `V`,
//! column norms give the singular values, normalized columns give the thin
//! part of `U`, and a deterministic Gram-Schmidt completion fills the
//! orthogonal complement so `U` is always square.

use crate::error::{Error, Result};
use crate::linalg::matrix::{dot, norm2, Matrix};

/// Default relative tolerance for deciding that a singular value is zero.
/// The cutoff is `rel_tol * sigma_max * max(m, n)`, mirroring standard
/// numerical-rank practice.
pub const DEFAULT_REL_TOL: f64 = 1e-10;

/// Hard cap on Jacobi sweeps before reporting non-convergence.
const MAX_SWEEPS: usize = 100;

/// Per-pair relative off-diagonal threshold. A sweep that rotates nothing
/// under this threshold has converged. Chosen so the normalized left singular
/// vectors stay pairwise orthogonal to ~1e-14 regardless of how graded the
/// spectrum is, which the aggregate Frobenius criterion cannot guarantee.
const PAIR_TOL: f64 = 1e-14;

/// Full SVD `A = U . diag(sigma) . V^T` with square orthogonal factors.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    u: Matrix,
    sigma: Vec<f64>,
    v: Matrix,
}

/// The extreme singular pairs of a matrix, restricted to the spectrum above
/// the rank tolerance.
#[derive(Debug, Clone)]
pub struct SigmaExtremes {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub u_min: Vec<f64>,
    pub v_min: Vec<f64>,
    pub u_max: Vec<f64>,
    pub v_max: Vec<f64>,
}

impl SvdResult {
    /// Left singular vectors, `m x m` orthogonal.
    pub fn u(&self) -> &Matrix {
        &self.u
    }

    /// Singular values, length `min(m, n)`, non-increasing, all >= 0.
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Right singular vectors, `n x n` orthogonal.
    pub fn v(&self) -> &Matrix {
        &self.v
    }

    fn dims(&self) -> (usize, usize) {
        (self.u.rows(), self.v.rows())
    }

    /// Numerical rank: the number of singular values above
    /// `rel_tol * sigma_max * max(m, n)`. The zero matrix has rank 0.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let (m, n) = self.dims();
        let sigma_max = self.sigma.first().copied().unwrap_or(0.0);
        let cutoff = rel_tol * sigma_max * m.max(n) as f64;
        self.sigma.iter().filter(|&&s| s > cutoff).count()
    }

    /// Smallest and largest singular values above the rank tolerance with
    /// their singular vectors. Ties pick the lowest index, which also fixes
    /// the subgradient used by the spectral penalties.
    pub fn sigma_extremes(&self, rel_tol: f64) -> Result<SigmaExtremes> {
        let r = self.rank(rel_tol);
        if r == 0 {
            return Err(Error::DegenerateSpectrum);
        }
        let sigma_max = self.sigma[0];
        let sigma_min = self.sigma[r - 1];
        // Lowest index attaining each extreme (descending order makes the
        // max index 0; the min scans for the first exact tie).
        let idx_max = 0;
        let idx_min = (0..r).find(|&i| self.sigma[i] == sigma_min).unwrap_or(r - 1);
        Ok(SigmaExtremes {
            sigma_min,
            sigma_max,
            u_min: self.u.column(idx_min),
            v_min: self.v.column(idx_min),
            u_max: self.u.column(idx_max),
            v_max: self.v.column(idx_max),
        })
    }

    /// `U . diag(sigma) . V^T`, for residual checks.
    pub fn reconstruct(&self) -> Matrix {
        let (m, n) = self.dims();
        let mut out = Matrix::zeros(m, n);
        for (k, &s) in self.sigma.iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            out.add_outer(s, &self.u.column(k), &self.v.column(k));
        }
        out
    }
}

/// Compute the full SVD of `a`. Deterministic for a fixed input: the sweep
/// order is fixed and the sign convention makes the first nonzero entry of
/// each right singular vector non-negative.
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    if let Some(bad) = a.data().iter().find(|x| !x.is_finite()) {
        return Err(Error::NumericalFailure {
            message: format!("non-finite entry {bad} in svd input"),
            residual: f64::NAN,
        });
    }
    let result = if a.rows() >= a.cols() {
        jacobi_tall(a)?
    } else {
        // A^T = U' S V'^T  =>  A = V' S U'^T
        let t = jacobi_tall(&a.transpose())?;
        SvdResult { u: t.v, sigma: t.sigma, v: t.u }
    };
    Ok(normalize_signs(result))
}

/// One-sided Jacobi on a tall (m >= n) matrix.
fn jacobi_tall(a: &Matrix) -> Result<SvdResult> {
    let m = a.rows();
    let n = a.cols();

    // Work on transposed storage so each logical column is a contiguous row.
    let mut bt = a.transpose(); // n x m, row j = column j of the working copy
    let mut vt = Matrix::identity(n); // row j = column j of V

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = 0usize;
        for p in 0..n {
            for q in (p + 1)..n {
                let gpp = dot(bt.row(p), bt.row(p));
                let gqq = dot(bt.row(q), bt.row(q));
                let gpq = dot(bt.row(p), bt.row(q));
                if gpq == 0.0 || gpq.abs() <= PAIR_TOL * gpp.sqrt() * gqq.sqrt() {
                    continue;
                }
                rotated += 1;
                let tau = (gqq - gpp) / (2.0 * gpq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (tau - (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut bt, p, q, c, s);
                rotate_rows(&mut vt, p, q, c, s);
            }
        }
        if rotated == 0 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NumericalFailure {
            message: format!("svd did not converge within {MAX_SWEEPS} sweeps"),
            residual: off_diagonal_residual(&bt),
        });
    }

    // Singular values and descending order (ties keep original index order).
    let raw_sigma: Vec<f64> = (0..n).map(|j| norm2(bt.row(j))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| raw_sigma[j].partial_cmp(&raw_sigma[i]).unwrap().then(i.cmp(&j)));
    let sigma: Vec<f64> = order.iter().map(|&j| raw_sigma[j]).collect();

    let v = Matrix::from_fn(n, n, |i, j| vt.get(order[j], i));

    // Thin U columns from the normalized working columns; directions whose
    // norm is at rounding level carry no signal and are rebuilt by the
    // completion below, together with the m-n complement columns.
    let fro = a.frobenius_norm();
    let dir_tol = f64::EPSILON * fro * m.max(n) as f64;
    let mut cols: Vec<Option<Vec<f64>>> = vec![None; m];
    for (k, &j) in order.iter().enumerate() {
        if sigma[k] > dir_tol {
            let col: Vec<f64> = bt.row(j).iter().map(|x| x / sigma[k]).collect();
            cols[k] = Some(col);
        }
    }
    complete_orthonormal_basis(&mut cols);
    let u = Matrix::from_fn(m, m, |i, j| cols[j].as_ref().unwrap()[i]);

    Ok(SvdResult { u, sigma, v })
}

/// Apply the rotation `(rp, rq) <- (c rp - s rq, s rp + c rq)` to rows p, q.
fn rotate_rows(mat: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = mat.cols();
    for k in 0..cols {
        let xp = mat.get(p, k);
        let xq = mat.get(q, k);
        mat.set(p, k, c * xp - s * xq);
        mat.set(q, k, s * xp + c * xq);
    }
}

/// Frobenius norm of the off-diagonal Gram entries of the working columns,
/// reported alongside non-convergence.
fn off_diagonal_residual(bt: &Matrix) -> f64 {
    let n = bt.rows();
    let mut sum = 0.0;
    for p in 0..n {
        for q in (p + 1)..n {
            let g = dot(bt.row(p), bt.row(q));
            sum += g * g;
        }
    }
    (2.0 * sum).sqrt()
}

/// Fill every `None` slot with unit vectors orthogonal to all filled columns.
/// Candidates are standard basis vectors picked by smallest projection onto
/// the current span (computable from row norms), orthogonalized with two
/// Gram-Schmidt passes. Fully deterministic.
fn complete_orthonormal_basis(cols: &mut [Option<Vec<f64>>]) {
    let m = cols.len();
    let mut row_norm2 = vec![0.0_f64; m];
    let mut filled: Vec<usize> = Vec::with_capacity(m);
    for (k, col) in cols.iter().enumerate() {
        if let Some(c) = col {
            filled.push(k);
            for (i, x) in c.iter().enumerate() {
                row_norm2[i] += x * x;
            }
        }
    }
    for k in 0..m {
        if cols[k].is_some() {
            continue;
        }
        // e_i with the smallest captured mass has residual norm^2 of
        // 1 - row_norm2[i], the largest available.
        let pick = (0..m)
            .min_by(|&i, &j| row_norm2[i].partial_cmp(&row_norm2[j]).unwrap().then(i.cmp(&j)))
            .unwrap();
        let mut vcol = vec![0.0_f64; m];
        vcol[pick] = 1.0;
        for _ in 0..2 {
            for &f in &filled {
                let existing = cols[f].as_ref().unwrap();
                let proj = dot(&vcol, existing);
                for (x, e) in vcol.iter_mut().zip(existing) {
                    *x -= proj * e;
                }
            }
        }
        let nrm = norm2(&vcol);
        for x in vcol.iter_mut() {
            *x /= nrm;
        }
        for (i, x) in vcol.iter().enumerate() {
            row_norm2[i] += x * x;
        }
        cols[k] = Some(vcol);
        filled.push(k);
    }
}

/// Sign convention: the first nonzero entry of each right singular vector is
/// non-negative; paired left vectors flip together so the product is
/// unchanged. Unpaired left columns (the orthogonal complement) are
/// normalized the same way for determinism.
fn normalize_signs(mut r: SvdResult) -> SvdResult {
    let (m, n) = r.dims();
    let paired = m.min(n);
    for j in 0..n {
        let col = r.v.column(j);
        if let Some(&lead) = col.iter().find(|x| **x != 0.0) {
            if lead < 0.0 {
                flip_column(&mut r.v, j);
                if j < paired {
                    flip_column(&mut r.u, j);
                }
            }
        }
    }
    for j in paired..m {
        let col = r.u.column(j);
        if let Some(&lead) = col.iter().find(|x| **x != 0.0) {
            if lead < 0.0 {
                flip_column(&mut r.u, j);
            }
        }
    }
    r
}

fn flip_column(mat: &mut Matrix, j: usize) {
    for i in 0..mat.rows() {
        let x = mat.get(i, j);
        mat.set(i, j, -x);
    }
}
