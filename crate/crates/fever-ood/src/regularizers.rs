//! Spectral training penalties on the classifier head.
//!
//! `lsv_penalty` is `1 / sigma_min(W)`: driving it down pushes the least
//! singular value up, so no feature direction outside the null space can
//! move the logits slowly. `cn_penalty` is the condition number
//! `sigma_max / sigma_min`, which additionally equalizes the response across
//! directions. Both come with analytic gradients from the singular-value
//! derivative `d sigma_i / dW = u_i v_i^T`, plus a central-difference checker.

use crate::error::{Error, Result};
use crate::linalg::{svd, Matrix, SigmaExtremes, DEFAULT_REL_TOL};

/// A penalty evaluation: scalar value, gradient with respect to every entry
/// of the head matrix, and a warning flag raised when `sigma_min` is within
/// a factor 1e-8 of vanishing (the value is still returned).
#[derive(Debug, Clone)]
pub struct PenaltyValue {
    pub value: f64,
    pub grad: Matrix,
    pub near_singular: bool,
}

/// Report from [`finite_diff_check`].
#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    /// Worst relative error over the checked entries.
    pub max_rel_err: f64,
    pub checked_entries: usize,
    /// Entries where the difference quotient is discontinuous (degenerate
    /// spectrum), where only a subgradient exists.
    pub skipped_entries: usize,
    /// True when `sigma_min` is tied at the tolerance, so the analytic
    /// gradient is a subgradient choice rather than the unique derivative.
    pub subgradient_case: bool,
}

fn extremes_of(w: &Matrix) -> Result<(SigmaExtremes, bool)> {
    let decomp = svd(w)?;
    let extremes = decomp.sigma_extremes(DEFAULT_REL_TOL)?;
    let near_singular = extremes.sigma_min < 1e-8 * extremes.sigma_max;
    Ok((extremes, near_singular))
}

/// `1 / sigma_min(w)` with gradient `-sigma_min^-2 . u_min v_min^T`. At a
/// degenerate `sigma_min` the lowest-index singular pair is used, making the
/// gradient a subgradient choice.
pub fn lsv_penalty(w: &Matrix) -> Result<PenaltyValue> {
    let (e, near_singular) = extremes_of(w)?;
    let mut grad = Matrix::zeros(w.rows(), w.cols());
    grad.add_outer(-1.0 / (e.sigma_min * e.sigma_min), &e.u_min, &e.v_min);
    Ok(PenaltyValue { value: 1.0 / e.sigma_min, grad, near_singular })
}

/// Condition number `sigma_max / sigma_min` with gradient
/// `(1/sigma_min) u_max v_max^T - (sigma_max/sigma_min^2) u_min v_min^T`.
pub fn cn_penalty(w: &Matrix) -> Result<PenaltyValue> {
    let (e, near_singular) = extremes_of(w)?;
    let mut grad = Matrix::zeros(w.rows(), w.cols());
    grad.add_outer(1.0 / e.sigma_min, &e.u_max, &e.v_max);
    grad.add_outer(-e.sigma_max / (e.sigma_min * e.sigma_min), &e.u_min, &e.v_min);
    Ok(PenaltyValue { value: e.sigma_max / e.sigma_min, grad, near_singular })
}

/// Compare a penalty's analytic gradient against central finite differences,
/// entry by entry. Relative error is measured only where the analytic
/// gradient is above 1e-8 in magnitude; entries whose one-sided difference
/// quotients disagree (a derivative kink from a degenerate spectrum) are
/// skipped and counted.
pub fn finite_diff_check<F>(penalty: F, w: &Matrix, step: f64) -> Result<FiniteDiffReport>
where
    F: Fn(&Matrix) -> Result<PenaltyValue>,
{
    if !(1e-8..=1e-3).contains(&step) {
        return Err(Error::ConfigError(format!("step must be in [1e-8, 1e-3], got {step}")));
    }
    let base = penalty(w)?;
    let decomp = svd(w)?;
    let r = decomp.rank(DEFAULT_REL_TOL);
    // tie at sigma_min => only subgradients exist there
    let subgradient_case = r >= 2 && {
        let smin = decomp.sigma()[r - 1];
        decomp.sigma()[..r - 1].iter().any(|s| (s - smin).abs() <= 1e-9 * smin.max(1e-300))
    };

    let mut max_rel_err = 0.0_f64;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    for i in 0..w.rows() {
        for j in 0..w.cols() {
            let mut plus = w.clone();
            plus.set(i, j, w.get(i, j) + step);
            let mut minus = w.clone();
            minus.set(i, j, w.get(i, j) - step);
            let f_plus = penalty(&plus)?.value;
            let f_minus = penalty(&minus)?.value;
            let f0 = base.value;

            let forward = (f_plus - f0) / step;
            let backward = (f0 - f_minus) / step;
            let spread = (forward - backward).abs();
            if spread > 1e-2 * (forward.abs() + backward.abs() + 1e-12) {
                skipped += 1;
                continue;
            }

            let analytic = base.grad.get(i, j);
            if analytic.abs() <= 1e-8 {
                continue;
            }
            let fd = (f_plus - f_minus) / (2.0 * step);
            max_rel_err = max_rel_err.max((fd - analytic).abs() / analytic.abs());
            checked += 1;
        }
    }
    Ok(FiniteDiffReport { max_rel_err, checked_entries: checked, skipped_entries: skipped, subgradient_case })
}
