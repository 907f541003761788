//! Ordinary least squares on small dense designs.
//!
//! Column dependence is decided by a Gram-Schmidt sweep in column order: a
//! column is dependent when what is left of it after projecting out the
//! columns kept so far is below `DEPENDENCE_TOL` of its own norm.

use nalgebra::{DMatrix, DVector};

use super::StatsError;
use crate::Matrix;

pub(crate) const DEPENDENCE_TOL: f64 = 1e-9;

fn column(x: &Matrix, j: usize) -> Vec<f64> {
    (0..x.rows()).map(|i| x.get(i, j)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Indices of a maximal linearly independent prefix-greedy subset of columns.
pub fn independent_columns(x: &Matrix) -> Vec<usize> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    for j in 0..x.cols() {
        let col = column(x, j);
        let scale = norm(&col);
        if scale == 0.0 {
            continue;
        }
        let mut r = col;
        // two passes keep the basis orthogonal to working precision
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &r);
                for (ri, qi) in r.iter_mut().zip(q) {
                    *ri -= c * qi;
                }
            }
        }
        let rn = norm(&r);
        if rn > DEPENDENCE_TOL * scale {
            r.iter_mut().for_each(|v| *v /= rn);
            basis.push(r);
            kept.push(j);
        }
    }
    kept
}

/// Least-squares coefficients for the kept columns of a design.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    /// Design columns that entered the fit, in order.
    pub kept: Vec<usize>,
    /// One coefficient per kept column.
    pub coef: Vec<f64>,
}

impl LinearFit {
    /// Fits `y ~ X` after dropping dependent columns.
    pub fn fit(x: &Matrix, y: &[f64]) -> Result<Self, StatsError> {
        if x.rows() != y.len() {
            return Err(StatsError::LengthMismatch {
                left: x.rows(),
                right: y.len(),
            });
        }
        let kept = independent_columns(x);
        let coef = solve(x, &kept, y);
        Ok(Self { kept, coef })
    }

    /// Fits `y ~ X`, failing if any column is dependent on earlier ones.
    pub fn fit_full_rank(x: &Matrix, y: &[f64]) -> Result<Self, StatsError> {
        let fit = Self::fit(x, y)?;
        if fit.kept.len() != x.cols() {
            let column = (0..x.cols()).find(|j| !fit.kept.contains(j)).unwrap_or(0);
            return Err(StatsError::RankDeficient { column });
        }
        Ok(fit)
    }

    /// Prediction for one design row.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.kept.iter().zip(&self.coef).map(|(&j, c)| row[j] * c).sum()
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        x.row_iter().map(|r| self.predict_row(r)).collect()
    }

    pub fn residuals(&self, x: &Matrix, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.predict(x))
            .map(|(yi, pi)| yi - pi)
            .collect()
    }
}

fn solve(x: &Matrix, kept: &[usize], y: &[f64]) -> Vec<f64> {
    if kept.is_empty() {
        return Vec::new();
    }
    let a = DMatrix::from_fn(x.rows(), kept.len(), |i, k| x.get(i, kept[k]));
    let b = DVector::from_column_slice(y);
    let qr = a.qr();
    let qtb = qr.q().transpose() * b;
    let r = qr.r();
    let mut beta = vec![0.0; kept.len()];
    for i in (0..kept.len()).rev() {
        let mut s = qtb[i];
        for k in i + 1..kept.len() {
            s -= r[(i, k)] * beta[k];
        }
        beta[i] = s / r[(i, i)];
    }
    beta
}

/// Prepends a column of ones.
pub fn with_intercept(covariates: &Matrix) -> Matrix {
    Matrix::from_fn(covariates.rows(), covariates.cols() + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            covariates.get(i, j - 1)
        }
    })
}

/// Residuals of `y` after regressing on an intercept plus `covariates`.
pub fn residualize_linear(y: &[f64], covariates: &Matrix) -> Result<Vec<f64>, StatsError> {
    if covariates.rows() != y.len() {
        return Err(StatsError::LengthMismatch {
            left: covariates.rows(),
            right: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) || covariates.first_non_finite().is_some() {
        return Err(StatsError::NonFinite);
    }
    let x = with_intercept(covariates);
    if y.len() < x.cols() {
        return Err(StatsError::TooFewPoints {
            needed: x.cols(),
            got: y.len(),
        });
    }
    let fit = LinearFit::fit_full_rank(&x, y)?;
    Ok(fit.residuals(&x, y))
}

/// Coefficient of determination of predictions against observations.
pub fn r_squared(y: &[f64], pred: &[f64]) -> Result<f64, StatsError> {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(StatsError::ConstantVector { which: "y" });
    }
    let ss_res: f64 = y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}
