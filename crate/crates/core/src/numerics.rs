//! Dense small-matrix utilities shared by every other module.
//!
//! Covariance handling goes through lower-triangular (Cholesky)
//! factorizations throughout; matrices are symmetrized as `(A + A^T)/2`
//! before factorizing so that round-off drift cannot break positive
//! definiteness checks. Dimensions in this crate are tiny (p <= 10), so
//! nothing here is tuned for scale.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Machine-epsilon based default step for central differences,
/// `eps^(1/3) ~ 6.06e-6`, scaled per component by `max(1, |x_i|)`.
pub fn default_fd_step() -> f64 {
    f64::EPSILON.cbrt()
}

/// `(a + a^T) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Cholesky factorization of a symmetrized copy of `a`.
///
/// `what` names the matrix in the error when `a` is not positive definite.
pub fn spd_cholesky(a: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    symmetrize(a).cholesky().ok_or_else(|| Error::NotPositiveDefinite {
        what: what.to_string(),
        step: None,
    })
}

/// Solves `a x = b` for symmetric positive definite `a`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    Ok(spd_cholesky(a, what)?.solve(b))
}

/// Inverse of a symmetric positive definite matrix via its factorization.
pub fn inverse_spd(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(spd_cholesky(a, what)?.inverse())
}

/// Log-density of `N(mean, cov)` at `x`.
///
/// Evaluated as `-(|x - mean|^2_{cov^-1} + d log(2 pi) + log det cov) / 2`
/// through a triangular factorization; the covariance is never inverted
/// explicitly. Fails if `cov` is not positive definite.
pub fn gaussian_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let d = x.len();
    if mean.len() != d || cov.nrows() != d || cov.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "gaussian_logpdf: x is {d}-dimensional, mean {}, cov {}x{}",
            mean.len(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    let chol = spd_cholesky(cov, "covariance")?;
    Ok(gaussian_logpdf_prefactored(x, mean, &chol))
}

/// Same as [`gaussian_logpdf`] with a pre-computed factorization.
pub fn gaussian_logpdf_prefactored(
    x: &DVector<f64>,
    mean: &DVector<f64>,
    chol: &Cholesky<f64, Dyn>,
) -> f64 {
    let d = x.len() as f64;
    let residual = x - mean;
    // |r|^2_{cov^-1} = |L^-1 r|^2
    let z = chol.l_dirty().solve_lower_triangular(&residual).unwrap();
    let ln_det: f64 = (0..x.len()).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>() * 2.0;
    -0.5 * (z.norm_squared() + d * (2.0 * std::f64::consts::PI).ln() + ln_det)
}

/// Central-difference gradient of a scalar function.
///
/// Component `i` uses step `h * max(1, |x_i|)`:
/// `(f(x + h_i e_i) - f(x - h_i e_i)) / (2 h_i)`.
/// Non-finite evaluations of `f` propagate as errors.
pub fn finite_diff_grad<F>(f: F, x: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> f64,
{
    assert!(h > 0.0, "finite_diff_grad: step must be positive");
    let n = x.len();
    let mut grad = DVector::zeros(n);
    let mut probe = x.clone();
    for i in 0..n {
        let hi = h * x[i].abs().max(1.0);
        probe[i] = x[i] + hi;
        let plus = f(&probe);
        probe[i] = x[i] - hi;
        let minus = f(&probe);
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "finite_diff_grad: f not finite near component {i}"
            )));
        }
        grad[i] = (plus - minus) / (2.0 * hi);
    }
    Ok(grad)
}

/// Second-order central-difference Hessian, symmetrized as `(H + H^T)/2`.
pub fn finite_diff_hess<F>(f: F, x: &DVector<f64>, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> f64,
{
    assert!(h > 0.0, "finite_diff_hess: step must be positive");
    let n = x.len();
    let f0 = f(x);
    if !f0.is_finite() {
        return Err(Error::NonFinite("finite_diff_hess: f(x) not finite".into()));
    }
    let step = |i: usize| h * x[i].abs().max(1.0);
    let mut hess = DMatrix::zeros(n, n);
    let mut probe = x.clone();
    for i in 0..n {
        let hi = step(i);
        probe[i] = x[i] + hi;
        let plus = f(&probe);
        probe[i] = x[i] - hi;
        let minus = f(&probe);
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "finite_diff_hess: f not finite near component {i}"
            )));
        }
        hess[(i, i)] = (plus - 2.0 * f0 + minus) / (hi * hi);
        for j in (i + 1)..n {
            let hj = step(j);
            let mut corner = |si: f64, sj: f64| {
                probe[i] = x[i] + si * hi;
                probe[j] = x[j] + sj * hj;
                let v = f(&probe);
                probe[i] = x[i];
                probe[j] = x[j];
                v
            };
            let pp = corner(1.0, 1.0);
            let pm = corner(1.0, -1.0);
            let mp = corner(-1.0, 1.0);
            let mm = corner(-1.0, -1.0);
            if ![pp, pm, mp, mm].iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "finite_diff_hess: f not finite near components ({i},{j})"
                )));
            }
            let mixed = (pp - pm - mp + mm) / (4.0 * hi * hj);
            hess[(i, j)] = mixed;
            hess[(j, i)] = mixed;
        }
    }
    Ok(symmetrize(&hess))
}

/// Default tolerance for PSD comparisons: `1e-8` at trace scale.
pub fn default_psd_tol(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = (a.trace().abs() + b.trace().abs()) * 0.5;
    1e-8 * scale.max(1.0)
}

/// Whether `a - b + tol*I` is positive semidefinite.
///
/// Both matrices must be symmetric and the same shape; the check floors the
/// smallest eigenvalue of the symmetrized difference.
pub fn psd_dominates(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> Result<bool> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() || a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "psd_dominates: {}x{} vs {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let diff = symmetrize(&(a - b));
    let min_eig = diff
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    Ok(min_eig >= -tol)
}

/// Symmetrizes and floors the eigenvalues of `a` at `floor` (PD repair for
/// averaged Monte Carlo matrices that drift marginally indefinite).
pub fn floor_eigenvalues(a: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = symmetrize(a).symmetric_eigen();
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < floor {
            *v = floor;
        }
    }
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Numerically stable `log(sum_i exp(x_i))`; `-inf` for an all-`-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}
