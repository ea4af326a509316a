//! Small least-squares helpers shared by the verification code.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit.
    pub residual: f64,
}

/// Least-squares coefficients of y ≈ Σ c_j basis_j(x); also returns the RMS
/// residual.
pub fn least_squares(design: &[Vec<f64>], y: &[f64]) -> Result<(Vec<f64>, f64)> {
    let m = design.len();
    if m == 0 || m != y.len() {
        return Err(Error::InsufficientRadii { need: 1, got: m });
    }
    let k = design[0].len();
    if m < k {
        return Err(Error::InsufficientRadii { need: k, got: m });
    }
    let a = DMatrix::from_fn(m, k, |i, j| design[i][j]);
    let b = DVector::from_column_slice(y);
    let svd = a.clone().svd(true, true);
    let c = svd.solve(&b, 1e-14).map_err(|e| Error::Config(e.to_string()))?;
    let r = &a * &c - &b;
    let rms = (r.norm_squared() / m as f64).sqrt();
    Ok((c.iter().copied().collect(), rms))
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() < 2 {
        return Err(Error::InsufficientRadii { need: 2, got: x.len() });
    }
    let rows: Vec<Vec<f64>> = x.iter().map(|&v| vec![1.0, v]).collect();
    let (c, residual) = least_squares(&rows, y)?;
    Ok(LinearFit { slope: c[1], intercept: c[0], residual })
}

/// Slope of log y against log x.
pub fn log_log_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly)
}

/// Convergence order of errors against mesh sizes (slope of log e vs log h).
pub fn convergence_order(h: &[f64], err: &[f64]) -> Result<LinearFit> {
    log_log_fit(h, err)
}

/// y ≈ limit + a x² + b x⁻²: the value at the scale where both power-law
/// corrections are removed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LimitFit {
    pub limit: f64,
    pub a: f64,
    pub b: f64,
    pub residual: f64,
}

pub fn power_corrected_limit(x: &[f64], y: &[f64]) -> Result<LimitFit> {
    if x.len() < 3 {
        return Err(Error::InsufficientRadii { need: 3, got: x.len() });
    }
    let rows: Vec<Vec<f64>> = x.iter().map(|&v| vec![1.0, v * v, 1.0 / (v * v)]).collect();
    let (c, residual) = least_squares(&rows, y)?;
    Ok(LimitFit { limit: c[0], a: c[1], b: c[2], residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_line_has_zero_residual() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 2.0 * v).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert_relative_eq!(f.slope, -2.0, epsilon = 1e-12);
        assert_relative_eq!(f.intercept, 3.0, epsilon = 1e-12);
        assert!(f.residual < 1e-12);
    }

    #[test]
    fn order_of_power_law() {
        let h = [0.1, 0.05, 0.025];
        let e: Vec<f64> = h.iter().map(|v: &f64| 7.0 * v.powi(4)).collect();
        assert_relative_eq!(convergence_order(&h, &e).unwrap().slope, 4.0, epsilon = 1e-10);
    }

    #[test]
    fn quadratic_basis() {
        let x = [0.5, 0.25, 0.125, 0.0625];
        let y: Vec<f64> = x.iter().map(|r| 2.0 + 0.5 * r * r).collect();
        let rows: Vec<Vec<f64>> = x.iter().map(|r| vec![1.0, r * r]).collect();
        let (c, res) = least_squares(&rows, &y).unwrap();
        assert_relative_eq!(c[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(c[1], 0.5, epsilon = 1e-10);
        assert!(res < 1e-12);
    }

    #[test]
    fn limit_removes_both_corrections() {
        let x = [0.1, 0.2, 0.3, 0.4];
        let y: Vec<f64> = x.iter().map(|v| 5.0 + 0.7 * v * v - 0.002 / (v * v)).collect();
        let f = power_corrected_limit(&x, &y).unwrap();
        assert_relative_eq!(f.limit, 5.0, epsilon = 1e-10);
        assert_relative_eq!(f.b, -0.002, epsilon = 1e-12);
        assert!(power_corrected_limit(&x[..2], &y[..2]).is_err());
    }

    #[test]
    fn too_few_points() {
        assert!(linear_fit(&[1.0], &[1.0]).is_err());
    }
}
